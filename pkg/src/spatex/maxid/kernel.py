"""Numerical kernel of the Gaussian-profile max-id model.

The process is ``Z(s) = max_i R_i W_i(s)`` where ``{R_i}`` is a Poisson process
with tail measure ``kappa_bar(r) = r^-1 exp{(1 - r^beta)/beta}`` and ``W`` a
standard Gaussian field with correlation ``rho(d) = exp{-(d/lambda)^nu}``
(negative values of ``W`` never contribute).

Writing ``M = max(W1/z1, W2/z2)`` the bivariate exponent function is
``V(z1, z2) = E[kappa_bar(1/M)]`` over ``M > 0``.  With ``q(m) =
kappa_bar(1/m)`` this becomes the one-dimensional integral

    V = int_0^inf q(m) [z1 phi(m z1) Phi(m c1) + z2 phi(m z2) Phi(m c2)] dm,

``c1 = (z2 - rho z1)/sqrt(1 - rho^2)`` (``c2`` symmetric), and the partial
derivatives are

    V1  = -int q(m) (1 + m^-beta) phi(m z1) Phi(m c1) dm
    V12 = -int q(m) (1 + m^-beta) m phi2(m z1, m z2; rho) dm.

Every integral is evaluated with Gauss-Legendre nodes in ``log v`` where
``v = m * scale`` and the window is cut where the integrand is below double
precision relative to its bulk.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

BETA_EPS = 1e-10
RHO_ONE = 1.0 - 1e-12
V_HI = 10.0
V_LO_FLOOR = 1e-4
DEFAULT_NODES = 64
LIK_NODES = 48
_SQRT2PI = np.sqrt(2.0 * np.pi)


class NumericError(ArithmeticError):
    """Non-finite result from a quadrature, with the offending inputs attached."""

    def __init__(self, msg, **inputs):
        super().__init__(f"{msg}: {inputs}")
        self.inputs = inputs


def kappa_bar(r, beta):
    """Tail measure ``kappa([r, inf))`` of the magnitude process.

    Uses the analytic ``beta -> 0`` limit ``r^-2`` when ``beta < 1e-10``.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("kappa_bar requires r > 0")
    beta = np.asarray(beta, dtype=float)
    out = np.exp(log_kappa_bar(r, beta))
    return float(out) if out.ndim == 0 else out


def log_kappa_bar(r, beta):
    lr = np.log(r)
    b = np.maximum(beta, BETA_EPS)
    return np.where(beta < BETA_EPS, -2.0 * lr, -lr - np.expm1(b * lr) / b)


def kappa_bar_inv(y, beta, tol: float = 1e-14):
    """Solve ``kappa_bar(r, beta) = y`` for ``r`` (vectorised, bracketed Newton in ``log r``)."""
    y = np.asarray(y, dtype=float)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), y.shape)
    ly = np.log(y)
    s = -ly / 2.0  # exact for the beta -> 0 limit
    small = beta < BETA_EPS
    b = np.maximum(beta, BETA_EPS)
    lo = np.full(y.shape, -np.inf)
    hi = np.full(y.shape, np.inf)
    for _ in range(200):
        f = -s - np.expm1(b * s) / b - ly
        # f is decreasing in s
        lo = np.where(f > 0, np.maximum(lo, s), lo)
        hi = np.where(f < 0, np.minimum(hi, s), hi)
        step = f / (1.0 + np.exp(b * s))
        s_new = s + step
        bad = ~((s_new > lo) & (s_new < hi))
        bracketed = np.isfinite(lo) & np.isfinite(hi)
        mid = 0.5 * (np.where(bracketed, lo, 0.0) + np.where(bracketed, hi, 0.0))
        s_new = np.where(bad & bracketed, mid, s_new)
        s_new = np.where(small, -ly / 2.0, s_new)
        done = np.all(np.abs(s_new - s) <= tol * (1.0 + np.abs(s)))
        s = s_new
        if done:
            break
    out = np.exp(s)
    return float(out) if out.ndim == 0 else out


def rho(d, lam, nu: float = 1.0):
    """Powered-exponential correlation ``exp{-(d/lambda)^nu}``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("range parameter lambda must be positive")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    out = np.exp(-((d / lam) ** nu))
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=8)
def _legendre(k: int):
    x, w = np.polynomial.legendre.leggauss(k)
    return x, w


def _log_m_lo(beta):
    # log of the m below which q(m) < e^-40 relative to q(1)
    b = np.maximum(beta, BETA_EPS)
    with np.errstate(over="ignore"):
        val = -np.log1p(40.0 * b) / b
    return np.where(beta < BETA_EPS, -np.inf, val)


def _nodes(scale, beta, v_hi, k):
    """Nodes ``v`` (n x k) and weights including the ``dv = v dt`` Jacobian."""
    scale = np.asarray(scale, dtype=float)
    lv_hi = np.log(v_hi)
    lv_lo = np.maximum(np.log(V_LO_FLOOR), np.log(scale) + _log_m_lo(beta))
    lv_lo = np.minimum(lv_lo, lv_hi - 0.7)
    x, w = _legendre(k)
    half = 0.5 * (lv_hi - lv_lo)
    t = (lv_lo + half)[..., None] + half[..., None] * x
    v = np.exp(t)
    return v, half[..., None] * w * v


def _log_q(m_log, beta):
    # log q(m) = log kappa_bar(1/m)
    b = np.maximum(beta, BETA_EPS)[..., None]
    return np.where((beta < BETA_EPS)[..., None], 2.0 * m_log, m_log - np.expm1(-b * m_log) / b)


def _phi(v):
    return np.exp(-0.5 * v * v) / _SQRT2PI


def _Phi(x):
    return 0.5 * special.erfc(-x / np.sqrt(2.0))


def single_site(z, beta, k: int = DEFAULT_NODES):
    """Single-site exponent ``V(z)`` and ``D(z) = -dV/dz``.

    ``G(z) = exp(-V(z))`` is the marginal distribution of ``Z`` and
    ``G(z) D(z)`` its density.
    """
    z, beta = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(beta, dtype=float))
    v, w = _nodes(z, beta, np.full(z.shape, V_HI), k)
    lm = np.log(v) - np.log(z)[..., None]
    lq = _log_q(lm, beta)
    base = np.exp(lq) * _phi(v) * w
    V = base.sum(-1)
    D = (base * (1.0 + np.exp(-beta[..., None] * lm))).sum(-1) / z
    return V, D


def pair_exponent(z1, z2, rho12, beta, k: int = DEFAULT_NODES, derivatives: bool = True):
    """Bivariate exponent ``V(z1, z2)`` and partials ``V1, V2, V12``."""
    z1, z2, r, beta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z1, z2, rho12, beta)))
    shape = z1.shape
    z1, z2, r, beta = (a.ravel() for a in (z1, z2, r, beta))
    V = np.empty(z1.size)
    V1 = np.zeros(z1.size)
    V2 = np.zeros(z1.size)
    V12 = np.zeros(z1.size)

    como = r >= RHO_ONE
    if como.any():
        zmin = np.minimum(z1[como], z2[como])
        Vs, Ds = single_site(zmin, beta[como], k)
        V[como] = Vs
        first = z1[como] < z2[como]
        tie = z1[como] == z2[como]
        V1[como] = np.where(first, -Ds, np.where(tie, -0.5 * Ds, 0.0))
        V2[como] = np.where(~first & ~tie, -Ds, np.where(tie, -0.5 * Ds, 0.0))

    g = ~como
    if g.any():
        a1, a2, rr, bb = z1[g], z2[g], r[g], beta[g]
        s = np.sqrt((1.0 - rr) * (1.0 + rr))
        c1 = (a2 - rr * a1) / s
        c2 = (a1 - rr * a2) / s
        tot = np.zeros(a1.size)
        parts = []
        for za, ca in ((a1, c1), (a2, c2)):
            ratio = ca / za
            vhi = np.where(ratio < 0, V_HI / np.sqrt(1.0 + ratio * ratio), V_HI)
            v, w = _nodes(za, bb, vhi, k)
            lm = np.log(v) - np.log(za)[:, None]
            base = np.exp(_log_q(lm, bb)) * _phi(v) * _Phi(v * ratio[:, None]) * w
            tot += base.sum(-1)
            if derivatives:
                parts.append(-(base * (1.0 + np.exp(-bb[:, None] * lm))).sum(-1) / za)
        V[g] = tot
        if derivatives:
            V1[g], V2[g] = parts
            Q = (a1 * a1 - 2.0 * rr * a1 * a2 + a2 * a2) / (s * s)
            sq = np.sqrt(Q)
            v, w = _nodes(sq, bb, np.full(sq.shape, V_HI), k)
            lm = np.log(v) - np.log(sq)[:, None]
            integ = np.exp(_log_q(lm, bb)) * (1.0 + np.exp(-bb[:, None] * lm)) * v * _phi(v) * w
            V12[g] = -integ.sum(-1) / (_SQRT2PI * s * Q)

    if not np.all(np.isfinite(V)):
        bad = np.flatnonzero(~np.isfinite(V))[:5]
        raise NumericError("non-finite exponent function", z1=z1[bad], z2=z2[bad], rho=r[bad], beta=beta[bad])
    out = (V.reshape(shape), V1.reshape(shape), V2.reshape(shape), V12.reshape(shape))
    return out


class MarginalTransform:
    """Marginal law ``G(z) = exp(-V(z))`` of the max-id process and its inverse.

    The inverse is tabulated on a log-spaced grid of ``grid_size`` points,
    interpolated with a monotone cubic in ``(log V, log z)`` and polished with
    Newton steps.
    """

    def __init__(self, beta: float, grid_size: int = 2048, k: int = DEFAULT_NODES):
        self.beta = float(beta)
        self.k = k
        lo, hi = self._bracket()
        lz = np.linspace(np.log(lo), np.log(hi), grid_size)
        V, _ = single_site(np.exp(lz), np.full(lz.shape, self.beta), k)
        keep = V > 1e-300
        lz, V = lz[keep], V[keep]
        lv = np.log(V)
        keep = np.concatenate([[True], np.diff(lv) < 0])
        lz, lv = lz[keep], lv[keep]
        # log V is decreasing in log z; interpolate log z against -log V
        self._interp = PchipInterpolator(-lv, lz)
        self._lv_range = (lv[-1], lv[0])

    def _V(self, z):
        return single_site(z, np.full(np.shape(z), self.beta), self.k)

    def _bracket(self):
        lo, hi = 1.0, 1.0
        while self._V(np.array([lo]))[0][0] < 50.0:
            lo /= 2.0
        while self._V(np.array([hi]))[0][0] > 1e-15:
            hi *= 1.25
        return lo, hi

    def cdf(self, z):
        V, _ = self._V(np.asarray(z, dtype=float))
        return np.exp(-V)

    def logpdf(self, z):
        V, D = self._V(np.asarray(z, dtype=float))
        return -V + np.log(D)

    def inv(self, u, polish: int = 2):
        """``G^{-1}(u)`` for ``u`` in (0, 1)."""
        u = np.asarray(u, dtype=float)
        if np.any(~(u > 0) | ~(u < 1)):
            raise ValueError("G inverse requires u in (0, 1)")
        target = np.log(-np.log(u))
        lz = self._interp(-np.clip(target, *self._lv_range))
        for _ in range(polish):
            z = np.exp(lz)
            V, D = self._V(z)
            # Newton on log V(exp(lz)) = target
            lz = lz - (np.log(V) - target) / (-z * D / V)
        return np.exp(lz)


@lru_cache(maxsize=256)
def marginal(beta: float) -> MarginalTransform:
    return MarginalTransform(beta)


def marginal_G(z, beta):
    """Marginal distribution function ``G(z)``."""
    return marginal(float(beta)).cdf(z)


def marginal_G_inv(u, beta):
    """Inverse marginal ``G^{-1}(u)``."""
    return marginal(float(beta)).inv(u)


def exponent_V(z1, z2, rho12, beta, k: int = DEFAULT_NODES):
    """``(V, V1, V2, V12)`` for the bivariate max-id law at ``(z1, z2)``."""
    return pair_exponent(z1, z2, rho12, beta, k)


def exponent_V_hermite(z1, z2, rho12, beta, n_nodes: int = 60):
    """Tensor Gauss-Hermite evaluation of ``V = E[kappa_bar(min(z1/W1+, z2/W2+))]``.

    The correlated Gaussian pair is rotated to the principal axes of its
    correlation matrix.  Values only (the integrand has kinks, so this route
    is not used for derivatives).
    """
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / np.sqrt(2.0 * np.pi)
    e1, e2 = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w)
    r = float(rho12)
    a = np.sqrt((1.0 + r) / 2.0)
    b = np.sqrt(max(1.0 - r, 0.0) / 2.0)
    W1 = a * e1 + b * e2
    W2 = a * e1 - b * e2
    with np.errstate(divide="ignore"):
        t1 = np.where(W1 > 0, z1 / W1, np.inf)
        t2 = np.where(W2 > 0, z2 / W2, np.inf)
    t = np.minimum(t1, t2)
    fin = np.isfinite(t)
    vals = np.zeros_like(t)
    vals[fin] = kappa_bar(t[fin], beta)
    return float((vals * ww).sum())
