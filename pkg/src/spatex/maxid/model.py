"""Pairwise composite likelihood, fitting, CLIC and model-based chi."""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize

from . import _fast
from .kernel import (
    BETA_EPS,
    DEFAULT_NODES,
    LIK_NODES,
    RHO_ONE,
    V_HI,
    V_LO_FLOOR,
    _legendre,
    marginal,
    pair_exponent,
    rho,
    single_site,
)

CHUNK = 4096
U_NUDGE = 1e-12


class FitError(RuntimeError):
    """Optimiser failure; ``trace`` holds the visited parameter vectors."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


@dataclass(frozen=True)
class MaxIdParams:
    """Parameters of the seasonal max-id model.

    ``beta(T) = exp(alpha0_beta + alpha1_beta T)`` and
    ``lambda(T) = exp(alpha0_lambda + alpha1_lambda T)`` (km).
    """

    alpha0_beta: float = 0.0
    alpha1_beta: float = 0.0
    alpha0_lambda: float = 0.0
    alpha1_lambda: float = 0.0
    nu: float = 1.0

    def __post_init__(self):
        vals = (self.alpha0_beta, self.alpha1_beta, self.alpha0_lambda, self.alpha1_lambda, self.nu)
        if not all(np.isfinite(vals)):
            raise ValueError("max-id parameters must be finite")
        if not 0 < self.nu <= 2:
            raise ValueError("nu must lie in (0, 2]")

    def beta(self, T):
        return np.exp(self.alpha0_beta + self.alpha1_beta * np.asarray(T, dtype=float))

    def lam(self, T):
        return np.exp(self.alpha0_lambda + self.alpha1_lambda * np.asarray(T, dtype=float))

    @classmethod
    def from_natural(cls, beta: float, lam: float, nu: float = 1.0):
        return cls(math.log(beta), 0.0, math.log(lam), 0.0, nu)


@dataclass
class PairSet:
    """Site pairs ``(j, k)`` with distances (km) and optional weights."""

    j: np.ndarray
    k: np.ndarray
    d: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        self.j = np.asarray(self.j)
        self.k = np.asarray(self.k)
        self.d = np.asarray(self.d, dtype=float)
        self.w = np.ones(self.d.size) if self.w is None else np.asarray(self.w, dtype=float)
        if not (self.j.size == self.k.size == self.d.size == self.w.size):
            raise ValueError("pair arrays must have equal length")
        if np.any(self.d < 0) or not np.all(np.isfinite(self.d)):
            raise ValueError("pair distances must be finite and non-negative")
        if np.any(self.j == self.k):
            raise ValueError("a pair must join two distinct sites")
        keys = {frozenset(p) for p in zip(self.j.tolist(), self.k.tolist())}
        if len(keys) != self.j.size:
            raise ValueError("each unordered pair may appear only once")

    def __len__(self):
        return self.d.size

    @classmethod
    def all_pairs(cls, sites, dist, cutoff: float | None = None):
        """All pairs ``j < k`` of ``sites`` from a distance matrix.

        With ``cutoff`` pairs further apart receive weight zero and are dropped.
        """
        sites = list(sites)
        dist = np.asarray(dist, dtype=float)
        jj, kk = np.triu_indices(len(sites), 1)
        d = dist[jj, kk]
        keep = np.ones(d.size, bool) if cutoff is None else d <= cutoff
        return cls(np.asarray(sites)[jj[keep]], np.asarray(sites)[kk[keep]], d[keep])

    def to_frame(self):
        return pd.DataFrame({"site_j": self.j, "site_k": self.k, "distance_km": self.d, "weight": self.w})

    @classmethod
    def from_frame(cls, df):
        w = df["weight"].to_numpy() if "weight" in df else None
        return cls(df["site_j"].to_numpy(), df["site_k"].to_numpy(), df["distance_km"].to_numpy(), w)


def _month_T(T, months):
    if callable(T):
        return np.array([float(T(int(m))) for m in months])
    if isinstance(T, dict):
        return np.array([float(T[int(m)]) for m in months])
    T = np.asarray(T, dtype=float)
    if T.shape == (12,):
        return T[np.asarray(months, dtype=int) - 1]
    raise ValueError("T must be a callable, a month->value dict or a length-12 array")


def _nudge(u):
    return np.clip(u, U_NUDGE, 1.0 - U_NUDGE)


def _logc_flat(z1, z2, lu1, lu2, lD1, lD2, r, beta, k=LIK_NODES, workers: int = 1):
    """Per-observation log copula density; fixed chunking, order-preserving."""
    x, w = _legendre(k)
    n = z1.size
    out = np.empty(n)
    bounds = [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]

    def run(b):
        s, e = b
        return _fast.pair_logc(z1[s:e], z2[s:e], lu1[s:e], lu2[s:e], lD1[s:e], lD2[s:e], r[s:e], beta[s:e],
                               x, w, V_HI, V_LO_FLOOR, BETA_EPS, RHO_ONE, out[s:e])

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(workers) as ex:
            floors = list(ex.map(run, bounds))
    else:
        floors = [run(b) for b in bounds]
    return out, int(sum(floors))


def _margins(u, beta):
    """``z = G^-1(u)`` and ``log D(z)`` for a common ``beta``."""
    tr = marginal(float(beta))
    z = tr.inv(u)
    _, D = single_site(z, np.full(z.shape, float(beta)), DEFAULT_NODES)
    return z, np.log(D)


def pair_loglik(u1, u2, d, T_m, p: MaxIdParams, k: int = LIK_NODES):
    """Log bivariate copula density of the max-id model.

    ``u1, u2`` are uniform-scale observations, ``d`` the pair distance (km)
    and ``T_m`` the temperature covariate of the replicate.
    """
    u1, u2, d, T_m = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u1, u2, d, T_m)))
    shape = u1.shape
    u1, u2 = _nudge(u1.ravel()), _nudge(u2.ravel())
    d, T_m = d.ravel(), T_m.ravel()
    beta = p.beta(T_m)
    r = rho(d, p.lam(T_m), p.nu)
    r = np.atleast_1d(r)
    z1 = np.empty(u1.size)
    z2 = np.empty(u1.size)
    lD1 = np.empty(u1.size)
    lD2 = np.empty(u1.size)
    for b in np.unique(beta):
        sel = beta == b
        z1[sel], lD1[sel] = _margins(u1[sel], b)
        z2[sel], lD2[sel] = _margins(u2[sel], b)
    out, n_floor = _logc_flat(z1, z2, np.log(u1), np.log(u2), lD1, lD2, r, beta, k)
    if n_floor:
        warnings.warn(f"{n_floor} non-positive pair densities floored at 1e-300", RuntimeWarning, stacklevel=2)
    return float(out[0]) if shape == () else out.reshape(shape)


def copula_cdf(u1, u2, d, T_m, p: MaxIdParams):
    """Bivariate copula ``C(u1, u2) = exp(-V(G^-1(u1), G^-1(u2)))``."""
    u1, u2 = np.broadcast_arrays(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float))
    b = float(p.beta(T_m))
    r = float(rho(d, float(p.lam(T_m)), p.nu))
    out = np.empty(u1.shape)
    one1 = u1 >= 1.0
    one2 = u2 >= 1.0
    zero = (u1 <= 0.0) | (u2 <= 0.0)
    inner = ~(one1 | one2 | zero)
    tr = marginal(b)
    if inner.any():
        z1 = tr.inv(u1[inner])
        z2 = tr.inv(u2[inner])
        out[inner] = np.exp(-pair_exponent(z1, z2, r, b, DEFAULT_NODES, derivatives=False)[0])
    out[one1] = u2[one1]
    out[one2 & ~one1] = u1[one2 & ~one1]
    out[zero] = 0.0
    return out


class PairData:
    """Uniform-scale data arranged for repeated composite-likelihood evaluation.

    Rows of ``data`` are ``(site_id, month, year, u)`` (a ``site`` column is
    also accepted); each distinct
    ``(year, month)`` is one replicate.  Replicate-pairs with either value
    missing are skipped.  Observation order is pair index, then time.
    """

    def __init__(self, data: pd.DataFrame, pairs: PairSet, T):
        if len(pairs) == 0:
            raise ValueError("composite likelihood needs at least one pair")
        if "site" not in data.columns and "site_id" in data.columns:
            data = data.rename(columns={"site_id": "site"})
        df = data[["site", "month", "year", "u"]].copy()
        if df.duplicated(["site", "month", "year"]).any():
            raise ValueError("duplicate (site, month, year) rows in uniform table")
        times = df[["year", "month"]].drop_duplicates().sort_values(["year", "month"]).reset_index(drop=True)
        self.times = times
        tindex = {(y, m): i for i, (y, m) in enumerate(zip(times.year.tolist(), times.month.tolist()))}
        sites = sorted(set(df.site.tolist()) | set(pairs.j.tolist()) | set(pairs.k.tolist()), key=str)
        sindex = {s: i for i, s in enumerate(sites)}
        self.sites = sites
        U = np.full((len(times), len(sites)), np.nan)
        ti = np.array([tindex[(y, m)] for y, m in zip(df.year.tolist(), df.month.tolist())], dtype=int)
        si = np.array([sindex[s] for s in df.site.tolist()], dtype=int)
        u = df.u.to_numpy(dtype=float)
        if np.any(~np.isfinite(u)) or np.any((u < 0) | (u > 1)):
            raise ValueError("uniform values must lie in [0, 1]")
        U[ti, si] = _nudge(u)
        self.U = U
        self.months = times.month.to_numpy(dtype=int)
        self.T = _month_T(T, self.months)
        pj = np.array([sindex[s] for s in pairs.j.tolist()], dtype=int)
        pk = np.array([sindex[s] for s in pairs.k.tolist()], dtype=int)
        obs = ~np.isnan(U)
        P_idx, T_idx = [], []
        for p in range(len(pairs)):
            tt = np.flatnonzero(obs[:, pj[p]] & obs[:, pk[p]])
            if tt.size == 0:
                raise ValueError(f"pair ({pairs.j[p]}, {pairs.k[p]}) has no joint observations")
            P_idx.append(np.full(tt.size, p))
            T_idx.append(tt)
        self.pidx = np.concatenate(P_idx)
        self.tidx = np.concatenate(T_idx)
        self.sj = pj[self.pidx]
        self.sk = pk[self.pidx]
        self.d = pairs.d[self.pidx]
        self.w = pairs.w[self.pidx]
        self.n_pairs = len(pairs)
        self.pairs = pairs
        self.lnU = np.log(np.where(obs, U, 0.5))
        self.pair_median_distance = float(np.median(pairs.d))

    @property
    def n_obs(self) -> int:
        return int(self.pidx.size)

    @property
    def n_times(self) -> int:
        return int(self.U.shape[0])

    def contributions(self, p: MaxIdParams, k: int = LIK_NODES, workers: int = 1):
        """Weighted log-density per observation and the number of floored terms."""
        beta_t = p.beta(self.T)
        lam_t = p.lam(self.T)
        Z = np.full(self.U.shape, np.nan)
        lD = np.full(self.U.shape, np.nan)
        obs = ~np.isnan(self.U)
        for b in np.unique(beta_t):
            rows = np.flatnonzero(beta_t == b)
            sub = self.U[rows]
            m = obs[rows]
            z, ld = _margins(sub[m], b)
            zz = np.full(sub.shape, np.nan)
            ll = np.full(sub.shape, np.nan)
            zz[m] = z
            ll[m] = ld
            Z[rows] = zz
            lD[rows] = ll
        t, a, b_ = self.tidx, self.sj, self.sk
        r = np.exp(-((self.d / lam_t[t]) ** p.nu))
        logc, n_floor = _logc_flat(Z[t, a], Z[t, b_], self.lnU[t, a], self.lnU[t, b_], lD[t, a], lD[t, b_], r,
                                   beta_t[t], k, workers)
        return logc * self.w, n_floor

    def pll(self, p: MaxIdParams, k: int = LIK_NODES, workers: int = 1) -> float:
        c, _ = self.contributions(p, k, workers)
        return float(np.sum(c))

    def per_replicate(self, p: MaxIdParams, k: int = LIK_NODES, workers: int = 1):
        c, _ = self.contributions(p, k, workers)
        return np.bincount(self.tidx, weights=c, minlength=self.n_times)


def pll(params: MaxIdParams, data: pd.DataFrame | PairData, pairs: PairSet | None = None, T=None,
        k: int = LIK_NODES, workers: int = 1) -> float:
    """Pairwise composite log-likelihood."""
    pdata = data if isinstance(data, PairData) else PairData(data, pairs, T)
    return pdata.pll(params, k, workers)


_NAMES = ("alpha0_beta", "alpha1_beta", "alpha0_lambda", "alpha1_lambda", "nu")


def _free_names(seasonal: bool, estimate_nu: bool):
    names = ["alpha0_beta", "alpha0_lambda"]
    if seasonal:
        names = ["alpha0_beta", "alpha1_beta", "alpha0_lambda", "alpha1_lambda"]
    if estimate_nu:
        names.append("nu")
    return names


def _to_params(theta, names, fixed: dict):
    vals = dict(fixed)
    for n, v in zip(names, theta):
        vals[n] = 2.0 / (1.0 + math.exp(-v)) if n == "nu" else float(v)
    return MaxIdParams(**vals)


def _from_params(p: MaxIdParams, names):
    out = []
    for n in names:
        v = getattr(p, n)
        out.append(-math.log(2.0 / v - 1.0) if n == "nu" else v)
    return np.array(out, dtype=float)


@dataclass
class MaxIdFit:
    params: MaxIdParams
    free: list
    theta: np.ndarray
    se: dict
    pll: float
    clic: float | None
    hessian: np.ndarray
    K: np.ndarray | None
    n_obs: int
    n_pairs: int
    n_times: int
    n_iter: int
    converged: bool
    n_floor: int = 0
    settings: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "params": asdict(self.params),
            "free": list(self.free),
            "se": {k: (None if not np.isfinite(v) else float(v)) for k, v in self.se.items()},
            "pll": self.pll,
            "clic": self.clic,
            "hessian": np.asarray(self.hessian).tolist(),
            "score_covariance": None if self.K is None else np.asarray(self.K).tolist(),
            "n_obs": self.n_obs,
            "n_pairs": self.n_pairs,
            "n_times": self.n_times,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "n_floor": self.n_floor,
            "settings": self.settings,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, dct):
        p = MaxIdParams(**dct["params"])
        return cls(p, dct["free"], _from_params(p, dct["free"]), dct["se"], dct["pll"], dct["clic"],
                   np.asarray(dct["hessian"]), None if dct.get("score_covariance") is None else
                   np.asarray(dct["score_covariance"]), dct["n_obs"], dct["n_pairs"], dct["n_times"],
                   dct["n_iter"], dct["converged"], dct.get("n_floor", 0), dct.get("settings", {}))


def _hessian(f, theta, h):
    p = theta.size
    H = np.empty((p, p))
    f0 = f(theta)
    E = np.eye(p) * h
    fp = [f(theta + E[i]) for i in range(p)]
    fm = [f(theta - E[i]) for i in range(p)]
    for i in range(p):
        H[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / (h * h)
        for j in range(i + 1, p):
            val = (f(theta + E[i] + E[j]) - f(theta + E[i] - E[j]) - f(theta - E[i] + E[j])
                   + f(theta - E[i] - E[j])) / (4.0 * h * h)
            H[i, j] = H[j, i] = val
    return H


def fit(data: pd.DataFrame | PairData, pairs: PairSet | None = None, T=None, seasonal: bool = False,
        nu: float = 1.0, estimate_nu: bool = False, start: MaxIdParams | None = None, k: int = LIK_NODES,
        workers: int = 1, compute_clic: bool = True, maxiter: int = 200, gtol: float = 1e-7) -> MaxIdFit:
    """Maximise the pairwise composite likelihood.

    ``seasonal=False`` estimates ``(alpha0_beta, alpha0_lambda)`` with the
    temperature slopes fixed at zero.  The default start is
    ``alpha0_beta = 0``, ``alpha0_lambda = log(median pair distance)`` and
    zero slopes.  With ``compute_clic`` the standard errors use the sandwich
    ``J^-1 K J^-1`` (``J`` the numerical Hessian of ``-PLL``, ``K`` the score
    covariance); without it they fall back to ``J^-1``, which understates the
    uncertainty of a composite likelihood.
    """
    pdata = data if isinstance(data, PairData) else PairData(data, pairs, T)
    names = _free_names(seasonal, estimate_nu)
    if start is None:
        start = MaxIdParams(0.0, 0.0, math.log(max(pdata.pair_median_distance, 1e-6)), 0.0, nu)
    fixed = {n: getattr(start, n) for n in _NAMES}
    if not seasonal:
        fixed["alpha1_beta"] = 0.0
        fixed["alpha1_lambda"] = 0.0
    if not estimate_nu:
        fixed["nu"] = nu
    scale = float(np.sum(pdata.w[pdata.w > 0])) or 1.0
    trace = []
    cache = {}

    def negll(theta):
        key = tuple(np.round(theta, 15))
        if key not in cache:
            try:
                val = -pdata.pll(_to_params(theta, names, fixed), k, workers) / scale
            except (ValueError, ArithmeticError, OverflowError):
                val = np.inf
            cache[key] = val if np.isfinite(val) else 1e10
        return cache[key]

    h_g = 1e-5

    def grad(theta):
        g = np.empty(theta.size)
        for i in range(theta.size):
            e = np.zeros(theta.size)
            e[i] = h_g
            g[i] = (negll(theta + e) - negll(theta - e)) / (2.0 * h_g)
        trace.append(theta.copy())
        return g

    theta0 = _from_params(start, names)
    if not np.isfinite(negll(theta0)) or negll(theta0) >= 1e10:
        raise FitError("composite likelihood is not finite at the starting values", trace)
    # diagonal finite-difference curvature at the start gives BFGS a well-scaled first step
    f0 = negll(theta0)
    curv = np.empty(theta0.size)
    for i in range(theta0.size):
        e = np.zeros(theta0.size)
        e[i] = 1e-3
        curv[i] = (negll(theta0 + e) - 2.0 * f0 + negll(theta0 - e)) / 1e-6
    H0inv = np.diag(1.0 / np.clip(np.abs(curv), 1e-3, 1e6))
    res = optimize.minimize(negll, theta0, jac=grad, method="BFGS",
                            options={"maxiter": maxiter, "gtol": gtol, "hess_inv0": H0inv})
    theta = np.asarray(res.x, dtype=float)
    gnorm = float(np.max(np.abs(grad(theta))))
    converged = bool(res.success) or gnorm < 1e-5
    if not np.all(np.isfinite(theta)):
        raise FitError("optimiser produced non-finite parameters", trace)
    best = _to_params(theta, names, fixed)
    contrib, n_floor = pdata.contributions(best, k, workers)
    total = float(np.sum(contrib))

    def neg_total(th):
        return -pdata.pll(_to_params(th, names, fixed), k, workers)

    H = _hessian(neg_total, theta, 2e-3)
    H = 0.5 * (H + H.T)
    try:
        cov = np.linalg.inv(H)
        se_vals = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        cov = None
        se_vals = np.full(theta.size, np.nan)
    Kmat = None
    clic_val = None
    if compute_clic:
        Kmat = score_covariance(pdata, theta, names, fixed, k, workers)
        clic_val = clic_from(total, H, Kmat)
        if cov is not None:
            # pairs within a replicate are dependent, so the sandwich form replaces the naive inverse Hessian
            G = cov @ Kmat @ cov
            se_vals = np.sqrt(np.where(np.diag(G) > 0, np.diag(G), np.nan))
    se = dict(zip(names, se_vals.tolist()))
    return MaxIdFit(best, names, theta, se, total, clic_val, H, Kmat, pdata.n_obs, pdata.n_pairs, pdata.n_times,
                    int(res.nit), converged, n_floor,
                    {"seasonal": seasonal, "estimate_nu": estimate_nu, "nodes": k, "nu": nu,
                     "start": asdict(start)})


def score_covariance(pdata: PairData, theta, names, fixed, k: int = LIK_NODES, workers: int = 1, h: float = 1e-4):
    """``K = sum_t s_t s_t'`` from per-replicate finite-difference scores."""
    S = np.empty((pdata.n_times, theta.size))
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = h
        lp = pdata.per_replicate(_to_params(theta + e, names, fixed), k, workers)
        lm = pdata.per_replicate(_to_params(theta - e, names, fixed), k, workers)
        S[:, i] = (lp - lm) / (2.0 * h)
    return S.T @ S


def clic_from(pll_value: float, J, K) -> float:
    J = np.asarray(J, dtype=float)
    try:
        tr = float(np.trace(np.linalg.solve(J, K)))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Hessian is singular; consider a ridge of 1e-8 on its diagonal") from exc
    return -2.0 * pll_value + 2.0 * tr


def clic(fit_result: MaxIdFit) -> float:
    """Composite likelihood information criterion ``-2 PLL + 2 tr(J^-1 K)`` (lower is better)."""
    if fit_result.K is None:
        raise ValueError("fit was run without score covariance; refit with compute_clic=True")
    return clic_from(fit_result.pll, fit_result.hessian, fit_result.K)


def model_chi(d, T_m, p: MaxIdParams, q: float = 0.997):
    """Model ``chi_q = (1 - 2q + C(q, q)) / (1 - q)`` at distance ``d`` (km)."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    d, T_m = np.broadcast_arrays(np.asarray(d, dtype=float), np.asarray(T_m, dtype=float))
    out = np.empty(d.shape)
    flat_d, flat_T = d.ravel(), T_m.ravel()
    res = np.empty(flat_d.size)
    for i, (dd, tt) in enumerate(zip(flat_d, flat_T)):
        b = float(p.beta(tt))
        z = float(marginal(b).inv(np.array([q]))[0])
        r = float(rho(dd, float(p.lam(tt)), p.nu))
        V = pair_exponent(z, z, r, b, DEFAULT_NODES, derivatives=False)[0]
        C = math.exp(-float(V))
        res[i] = min(max((1.0 - 2.0 * q + C) / (1.0 - q), 0.0), 1.0)
    out[...] = res.reshape(d.shape)
    return float(out) if out.ndim == 0 else out
