"""GEV distribution: cdf, quantile, density, likelihood gradient, CRPS.

All functions broadcast over array-valued parameters so that per-row fitted
parameters of a non-stationary model can be passed directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

XI_EPS = 1e-8  # below this |xi| the Gumbel expressions are used
EULER_GAMMA = np.euler_gamma


class DomainError(ValueError):
    """Raised for arguments outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class GevParams:
    """Location / scale / shape of a GEV distribution.

    Fields may be scalars or equally-shaped arrays (one entry per row of a
    maxima table).
    """

    mu: np.ndarray | float
    sigma: np.ndarray | float
    xi: np.ndarray | float

    def __post_init__(self):
        for name in ("mu", "sigma", "xi"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"GEV parameter {name} must be finite")
        if np.any(np.asarray(self.sigma) <= 0):
            raise DomainError("GEV scale must be positive")

    def shift(self, c: float) -> "GevParams":
        return GevParams(np.asarray(self.mu) + c, self.sigma, self.xi)

    def take(self, idx) -> "GevParams":
        b = np.broadcast_arrays(self.mu, self.sigma, self.xi)
        return GevParams(b[0][idx], b[1][idx], b[2][idx])

    def median(self):
        return gev_quantile(0.5, self)


@dataclass(frozen=True)
class ReturnSpec:
    period_years: int
    block_frequency: int = 12

    def __post_init__(self):
        if int(self.period_years) != self.period_years or self.period_years < 2:
            raise DomainError("return period must be an integer >= 2")


def _arrays(x, p: GevParams):
    x, mu, sigma, xi = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(p.mu, dtype=float),
        np.asarray(p.sigma, dtype=float), np.asarray(p.xi, dtype=float))
    return x, mu, sigma, xi


def _scalar_or_array(out, *inputs):
    if all(np.ndim(a) == 0 for a in inputs):
        return float(out)
    return out


def gev_cdf(x, p: GevParams):
    """Distribution function ``exp(-[1 + xi (x - mu)/sigma]_+^(-1/xi))``."""
    if not np.all(np.isfinite(x)):
        raise DomainError("gev_cdf requires finite x")
    x_, mu, sigma, xi = _arrays(x, p)
    z = (x_ - mu) / sigma
    out = np.empty_like(z)
    gum = np.abs(xi) < XI_EPS
    out[gum] = np.exp(-np.exp(-z[gum]))
    ng = ~gum
    t = 1.0 + xi[ng] * z[ng]
    inside = t > 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = np.exp(-np.exp(-np.log1p(xi[ng] * z[ng]) / xi[ng]))
    val = np.where(inside, val, np.where(xi[ng] > 0, 0.0, 1.0))
    out[ng] = val
    return _scalar_or_array(out, x, p.mu, p.sigma, p.xi)


def pit(x, p: GevParams):
    """Probability integral transform of maxima through fitted per-row GEVs."""
    return gev_cdf(x, p)


def gev_quantile(u, p: GevParams):
    """Inverse of :func:`gev_cdf` for ``0 < u < 1``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr > 0) | ~(u_arr < 1)):
        raise DomainError("quantile level must lie in (0, 1)")
    u_, mu, sigma, xi = _arrays(u_arr, p)
    lny = np.log(-np.log(u_))
    out = np.empty_like(u_)
    gum = np.abs(xi) < XI_EPS
    out[gum] = mu[gum] - sigma[gum] * lny[gum]
    ng = ~gum
    out[ng] = mu[ng] + sigma[ng] * np.expm1(-xi[ng] * lny[ng]) / xi[ng]
    return _scalar_or_array(out, u, p.mu, p.sigma, p.xi)


def gev_logpdf(x, p: GevParams):
    """Log density; ``-inf`` off the support."""
    x_, mu, sigma, xi = _arrays(x, p)
    z = (x_ - mu) / sigma
    out = np.full_like(z, -np.inf)
    gum = np.abs(xi) < XI_EPS
    with np.errstate(over="ignore"):
        out[gum] = -np.log(sigma[gum]) - z[gum] - np.exp(-z[gum])
    ng = ~gum
    t = 1.0 + xi[ng] * z[ng]
    inside = t > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        lt = np.log1p(xi[ng] * z[ng])
        val = -np.log(sigma[ng]) - (1.0 + 1.0 / xi[ng]) * lt - np.exp(-lt / xi[ng])
    out[ng] = np.where(inside, val, -np.inf)
    return _scalar_or_array(out, x, p.mu, p.sigma, p.xi)


def _h_series(xi, z):
    # log(t)/xi^2 - z/(xi t) with t = 1 + xi z, expanded for small xi z
    w = xi * z
    acc = np.zeros_like(w)
    wk = np.ones_like(w)
    for k in range(2, 9):
        acc += (-1) ** k * wk * (k - 1) / k
        wk = wk * w
    return acc * z * z


def gev_nll_terms(x, mu, sigma, xi):
    """Per-observation negative log-likelihood and its partial derivatives.

    Returns ``(nll, d_mu, d_sigma, d_xi)``, each shaped like the broadcast
    inputs. Observations off the support get ``nll = inf`` and NaN partials.
    """
    x, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, mu, sigma, xi)))
    z = (x - mu) / sigma
    nll = np.empty_like(z)
    dmu = np.empty_like(z)
    dsig = np.empty_like(z)
    dxi = np.empty_like(z)

    gum = np.abs(xi) < XI_EPS
    if gum.any():
        zg, sg = z[gum], sigma[gum]
        ez = np.exp(-zg)
        nll[gum] = np.log(sg) + zg + ez
        dmu[gum] = -(1.0 - ez) / sg
        dsig[gum] = 1.0 / sg - zg * (1.0 - ez) / sg
        dxi[gum] = (ez - 1.0) * zg * zg / 2.0 + zg

    ng = ~gum
    if ng.any():
        zn, sn, xn = z[ng], sigma[ng], xi[ng]
        t = 1.0 + xn * zn
        ok = t > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = np.log1p(xn * zn)
            y = np.exp(-lt / xn)
            a = (xn + 1.0 - y) / (sn * t)
            small = np.abs(xn * zn) < 1e-3
            h = np.where(small, _h_series(xn, zn), lt / xn**2 - zn / (xn * t))
            vals = np.log(sn) + (1.0 + 1.0 / xn) * lt + y
            gmu = -a
            gsig = 1.0 / sn - zn * a
            gxi = (y - 1.0) * h + zn / t
        nll[ng] = np.where(ok, vals, np.inf)
        dmu[ng] = np.where(ok, gmu, np.nan)
        dsig[ng] = np.where(ok, gsig, np.nan)
        dxi[ng] = np.where(ok, gxi, np.nan)
    return nll, dmu, dsig, dxi


def gev_nll_grad(params: GevParams, data):
    """Total negative log-likelihood of ``data`` and its gradient in (mu, sigma, xi).

    Returns ``(inf, nan-vector)`` if any datum lies off the support.
    """
    data = np.asarray(data, dtype=float)
    if not np.all(np.isfinite(data)):
        raise DomainError("data must be finite")
    nll, dmu, dsig, dxi = gev_nll_terms(data, params.mu, params.sigma, params.xi)
    if not np.all(np.isfinite(nll)):
        return np.inf, np.full(3, np.nan)
    return float(nll.sum()), np.array([dmu.sum(), dsig.sum(), dxi.sum()])


def return_level(spec: ReturnSpec, p: GevParams):
    """Effective ``period_years`` return level of a per-block (monthly) GEV."""
    return gev_quantile(1.0 - 1.0 / spec.period_years, p)


def relative_change(new, ref):
    """Percentage change ``100 (new - ref) / ref``."""
    return 100.0 * (np.asarray(new) - np.asarray(ref)) / np.asarray(ref)


def _crps_closed(y, mu, sigma, xi):
    z = (y - mu) / sigma
    F = gev_cdf(y, GevParams(mu, sigma, xi))
    F = np.asarray(F, dtype=float)
    out = np.empty_like(z)
    gum = np.abs(xi) < XI_EPS
    if gum.any():
        Fg = F[gum]
        with np.errstate(divide="ignore"):
            lnF = np.log(Fg)
        ei = np.where(Fg > 0, special.expi(lnF), 0.0)
        out[gum] = sigma[gum] * (-z[gum] + EULER_GAMMA - np.log(2.0)) - 2.0 * sigma[gum] * ei
    ng = ~gum
    if ng.any():
        Fn, xn, sn = F[ng], xi[ng], sigma[ng]
        with np.errstate(divide="ignore"):
            nlF = np.where(Fn > 0, -np.log(Fn), np.inf)
        a = 1.0 - xn
        g_low = special.gamma(a) * np.where(np.isinf(nlF), 1.0, special.gammainc(a, np.where(np.isinf(nlF), 0.0, nlF)))
        out[ng] = (sn * (-z[ng]) - sn / xn) * (1.0 - 2.0 * Fn) - sn / xn * (
            2.0**xn * special.gamma(a) - 2.0 * g_low)
    return out


def crps_numeric(y: float, p: GevParams) -> float:
    """CRPS by adaptive quadrature of ``(F(t) - 1{t >= y})^2``."""
    mu, sigma, xi = float(p.mu), float(p.sigma), float(p.xi)
    # endpoints further than 1e4 scales away are treated as infinite
    lo = mu - sigma / xi if xi > 1e-4 else -np.inf
    hi = mu - sigma / xi if xi < -1e-4 else np.inf

    def left(t):
        return gev_cdf(t, p) ** 2

    def right(t):
        return (1.0 - gev_cdf(t, p)) ** 2

    total = 0.0
    if y < lo:
        total += lo - y
    if y > hi:
        total += y - hi
    yl = min(max(y, lo), hi)
    med = float(gev_quantile(0.5, p))
    pts_left = sorted({lo, min(med, yl), yl})
    pts_right = sorted({yl, max(med, yl), hi})
    for a, b in zip(pts_left[:-1], pts_left[1:]):
        if b > a:
            total += integrate.quad(left, a, b, limit=200, epsabs=1e-12, epsrel=1e-12)[0]
    for a, b in zip(pts_right[:-1], pts_right[1:]):
        if b > a:
            total += integrate.quad(right, a, b, limit=200, epsabs=1e-12, epsrel=1e-12)[0]
    return total


def crps_gev(y, p: GevParams):
    """Continuous ranked probability score of a GEV forecast for outcome ``y``.

    Closed form for ``xi < 1``; adaptive quadrature (with a warning) otherwise.
    """
    arrs = _arrays(y, p)
    shape = arrs[0].shape
    y_, mu, sigma, xi = (a.ravel() for a in arrs)
    out = np.empty_like(y_)
    heavy = xi >= 1.0
    if heavy.any():
        warnings.warn("xi >= 1: CRPS evaluated by numerical integration", RuntimeWarning, stacklevel=2)
        for i in np.flatnonzero(heavy):
            out[i] = crps_numeric(y_[i], GevParams(mu[i], sigma[i], xi[i]))
    light = ~heavy
    if light.any():
        out[light] = _crps_closed(y_[light], mu[light], sigma[light], xi[light])
    out = np.maximum(out, 0.0).reshape(shape)
    return _scalar_or_array(out, y, p.mu, p.sigma, p.xi)


def _moment_start(data):
    s = np.std(data)
    sigma = max(s * np.sqrt(6.0) / np.pi, 1e-6)
    mu = np.mean(data) - EULER_GAMMA * sigma
    return mu, sigma


def gev_fit(data, xi0: float = 0.05):
    """Stationary maximum-likelihood GEV fit.

    Returns ``(params, cov, nll)`` where ``cov`` is the inverse observed
    information for ``(mu, sigma, xi)``.
    """
    data = np.asarray(data, dtype=float)
    mu0, s0 = _moment_start(data)

    def f(theta):
        mu, lsig, xi = theta
        sig = np.exp(lsig)
        nll, g = gev_nll_grad(GevParams(mu, sig, xi), data)
        if not np.isfinite(nll):
            return 1e300, np.zeros(3)
        return nll, np.array([g[0], g[1] * sig, g[2]])

    best = None
    for xi_start in (xi0, 0.0, -0.1, 0.2):
        res = optimize.minimize(f, [mu0, np.log(s0), xi_start], jac=True, method="BFGS",
                                options={"gtol": 1e-9, "maxiter": 2000})
        if best is None or res.fun < best.fun:
            best = res
    mu, lsig, xi = best.x
    params = GevParams(mu, np.exp(lsig), xi)
    info = observed_information(params, data)
    return params, np.linalg.inv(info), float(best.fun)


def observed_information(params: GevParams, data, rel_step: float = 1e-5):
    """Hessian of the total nll in (mu, sigma, xi) by central differences of the gradient."""
    base = np.array([params.mu, params.sigma, params.xi], dtype=float)
    steps = rel_step * np.array([params.sigma, params.sigma, 1.0])
    H = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = steps[j]
        _, gp = gev_nll_grad(GevParams(*(base + e)), data)
        _, gm = gev_nll_grad(GevParams(*(base - e)), data)
        H[:, j] = (gp - gm) / (2 * steps[j])
    return 0.5 * (H + H.T)


def gev_rvs(p: GevParams, size=None, rng=None):
    """Draw GEV variates by inversion."""
    rng = np.random.default_rng(rng)
    shape = size if size is not None else np.broadcast(p.mu, p.sigma, p.xi).shape
    u = rng.uniform(size=shape)
    u = np.clip(u, 1e-300, 1 - 1e-16)
    return gev_quantile(u, p)
