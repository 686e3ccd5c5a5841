"""Simulation of Gaussian fields and max-id fields on a site layout."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import norm

from .geo import haversine
from .maxid.kernel import kappa_bar_inv, marginal, rho
from .maxid.model import MaxIdParams

MAX_POINTS = 1_000_000
JITTER = 1e-10


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SiteLayout:
    """Site coordinates, either planar km (``lonlat=False``) or ``(lon, lat)`` degrees."""

    coords: np.ndarray
    lonlat: bool = False
    site_ids: tuple | None = None

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if c.shape[1] != 2 or not np.all(np.isfinite(c)):
            raise ValueError("coordinates must be a finite (n, 2) array")
        object.__setattr__(self, "coords", c)
        ids = tuple(range(len(c))) if self.site_ids is None else tuple(self.site_ids)
        if len(ids) != len(c):
            raise ValueError("one site id per coordinate row is required")
        object.__setattr__(self, "site_ids", ids)

    @property
    def n_sites(self) -> int:
        return len(self.coords)

    @property
    def distances(self) -> np.ndarray:
        c = self.coords
        if self.lonlat:
            D = haversine(c[:, None, :], c[None, :, :])
        else:
            D = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(D, 0.0)
        return 0.5 * (D + D.T)

    @classmethod
    def grid(cls, n_side: int, spacing: float):
        x = np.arange(n_side) * spacing
        xx, yy = np.meshgrid(x, x)
        return cls(np.column_stack([xx.ravel(), yy.ravel()]))

    @classmethod
    def uniform(cls, n: int, extent: float, seed: int = 0):
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(0.0, extent, size=(n, 2)))


def _chol(D, lam, nu):
    R = rho(D, lam, nu) if np.ndim(D) else np.array([[1.0]])
    R = np.atleast_2d(R)
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(R + JITTER * np.eye(len(R)))
    except np.linalg.LinAlgError as exc:
        raise SimulationError("correlation matrix is not positive definite after jitter") from exc


def _stream(seed: int, i: int):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def sim_gauss(layout: SiteLayout, lam: float, nu: float, n: int, seed: int) -> np.ndarray:
    """``n`` replicates (rows) of a standard Gaussian field with correlation ``rho(d)``."""
    L = _chol(layout.distances, lam, nu)
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, layout.n_sites)) @ L.T


def _groups(D):
    # sites at zero distance share one simulated value
    n = len(D)
    rep = np.arange(n)
    for i in range(n):
        if rep[i] != i:
            continue
        same = np.flatnonzero(D[i] == 0.0)
        rep[same[same > i]] = i
    return rep


def _one_replicate(i, seed, L, beta, w_hi, batch):
    rng = _stream(seed, i)
    n = L.shape[0]
    zmax = np.zeros(n)
    gamma = 0.0
    used = 0
    b = batch
    while True:
        e = rng.standard_exponential(b)
        g = gamma + np.cumsum(e)
        gamma = g[-1]
        R = kappa_bar_inv(g, beta)
        W = rng.standard_normal((b, n)) @ L.T
        np.maximum(zmax, (R[:, None] * np.maximum(W, 0.0)).max(axis=0), out=zmax)
        used += b
        if zmax.min() > 0 and R[-1] * w_hi < zmax.min():
            return zmax
        if used >= MAX_POINTS:
            raise SimulationError(f"replicate {i} did not terminate within {MAX_POINTS} points")
        b = min(2 * b, 4096)


def sim_maxid_raw(layout: SiteLayout, params: MaxIdParams, T, n: int, seed: int, eps: float = 1e-6,
                  workers: int = 1, batch: int = 32):
    """Replicates of ``Z(s) = max_i R_i W_i(s)+`` on the original (non-uniform) scale.

    Returns ``(Z, beta)`` with ``Z`` of shape ``(n, n_sites)`` and the
    per-replicate ``beta``.  Each replicate uses its own random stream derived
    from ``(seed, replicate index)``, so output does not depend on ``workers``.
    """
    T = np.broadcast_to(np.asarray(T, dtype=float), (n,))
    beta = params.beta(T)
    lam = params.lam(T)
    D = layout.distances
    rep = _groups(D)
    uniq = np.unique(rep)
    Du = D[np.ix_(uniq, uniq)]
    chol = {}
    for lv in np.unique(lam):
        chol[float(lv)] = _chol(Du, float(lv), params.nu)
    w_hi = float(norm.isf(eps * 1e-3))

    def run(i):
        return _one_replicate(i, seed, chol[float(lam[i])], float(beta[i]), w_hi, batch)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(run, range(n)))
    else:
        rows = [run(i) for i in range(n)]
    Zu = np.vstack(rows) if rows else np.empty((0, uniq.size))
    col = np.searchsorted(uniq, rep)
    return Zu[:, col], beta


def sim_maxid(layout: SiteLayout, params: MaxIdParams, T, n: int, seed: int, eps: float = 1e-6,
              workers: int = 1) -> np.ndarray:
    """Max-id replicates transformed to uniform margins through ``G``."""
    Z, beta = sim_maxid_raw(layout, params, T, n, seed, eps, workers)
    U = np.empty_like(Z)
    for b in np.unique(beta):
        rows = beta == b
        U[rows] = marginal(float(b)).cdf(Z[rows])
    return U


def uniform_table(U, site_ids, months, years) -> pd.DataFrame:
    """Long ``(site_id, month, year, u)`` table from a replicate-by-site array."""
    U = np.asarray(U, dtype=float)
    n, s = U.shape
    return pd.DataFrame({
        "site_id": np.tile(np.asarray(site_ids), n),
        "month": np.repeat(np.asarray(months, dtype=int), s),
        "year": np.repeat(np.asarray(years, dtype=int), s),
        "u": U.ravel(),
    })


def monthly_calendar(n: int, start_year: int = 1990):
    """Months and years for ``n`` consecutive monthly replicates."""
    idx = np.arange(n)
    return idx % 12 + 1, start_year + idx // 12


def seasonal_T(months):
    """Standardised smooth annual temperature cycle, coldest in January."""
    m = np.asarray(months, dtype=float)
    return -np.sqrt(2.0) * np.cos(2.0 * np.pi * (m - 1.0) / 12.0)


def synthetic_maxima(n_sites: int = 49, n_years: int = 33, seed: int = 0, dependence: MaxIdParams | None = None,
                     mu0: float = 20.0, slope_A: float = 2.0, seasonal_amp: float = 3.0, sigma: float = 4.0,
                     xi: float = 0.1, start_year: int = 1988, bbox=(11.0, 45.0, 13.0, 46.5), workers: int = 1):
    """Monthly maxima table in the ingest schema with known generating margins.

    Sites are uniform in the lon/lat box ``bbox``.  Margins are GEV with
    ``mu = mu0 + slope_A * A + seasonal_amp * sin(2 pi month / 12)`` and
    constant ``sigma`` and ``xi``; ``A`` is a per-year anomaly (trend plus
    noise).  Sites are independent unless ``dependence`` gives max-id
    parameters, in which case uniforms come from ``sim_maxid`` with the
    seasonal covariate ``T`` of each month.
    """
    from .evd import GevParams, gev_quantile

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
    lon = rng.uniform(bbox[0], bbox[2], n_sites)
    lat = rng.uniform(bbox[1], bbox[3], n_sites)
    site_ids = [f"S{i + 1:03d}" for i in range(n_sites)]
    n = 12 * n_years
    months, years = monthly_calendar(n, start_year)
    A_year = np.linspace(-0.5, 0.8, n_years) + rng.normal(0.0, 0.15, n_years)
    T = seasonal_T(months)
    if dependence is None:
        U = rng.uniform(size=(n, n_sites))
    else:
        U = sim_maxid(SiteLayout(np.column_stack([lon, lat]), lonlat=True), dependence, T, n, seed, workers=workers)
    tab = uniform_table(U, site_ids, months, years)
    A = A_year[tab.year.to_numpy() - start_year]
    mu = mu0 + slope_A * A + seasonal_amp * np.sin(2.0 * np.pi * tab.month.to_numpy() / 12.0)
    tab["maximum"] = gev_quantile(np.clip(tab.u.to_numpy(), 1e-12, 1 - 1e-12), GevParams(mu, sigma, xi))
    tab["longitude"] = np.tile(lon, n)
    tab["latitude"] = np.tile(lat, n)
    tab["A"] = A
    tab["T"] = seasonal_T(tab.month.to_numpy())
    cols = ["site_id", "longitude", "latitude", "month", "year", "maximum", "A", "T", "u"]
    return tab[cols]
