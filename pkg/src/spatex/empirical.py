"""Empirical tail dependence: pairwise chi_q and distance-binned curves."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .geo import haversine

SEASONS = {
    "winter": (12, 1, 2),
    "spring": (3, 4, 5),
    "summer": (6, 7, 8),
    "autumn": (9, 10, 11),
    "all": tuple(range(1, 13)),
}
MIN_N = 20


class UndefinedChiWarning(RuntimeWarning):
    pass


def ecdf_ranks(x) -> np.ndarray:
    """Empirical CDF values ``rank / (n + 1)`` with average ranks for ties."""
    x = np.asarray(x, dtype=float)
    return rankdata(x, method="average") / (x.size + 1.0)


def chi_q(x1, x2, q: float) -> float:
    """Empirical ``P(F1(X1) > q | F2(X2) > q)`` on jointly observed entries.

    Returns ``nan`` (with an ``UndefinedChiWarning``) when no ``F2`` value
    exceeds ``q``.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    a = np.asarray(x1, dtype=float)
    b = np.asarray(x2, dtype=float)
    if a.shape != b.shape:
        raise ValueError("series must be paired")
    keep = ~(np.isnan(a) | np.isnan(b))
    a, b = a[keep], b[keep]
    if a.size < MIN_N:
        raise ValueError(f"chi_q needs at least {MIN_N} joint observations, got {a.size}")
    u1 = ecdf_ranks(a) > q
    u2 = ecdf_ranks(b) > q
    den = int(np.count_nonzero(u2))
    if den == 0:
        warnings.warn("no exceedances of q in the conditioning series", UndefinedChiWarning, stacklevel=2)
        return float("nan")
    return np.count_nonzero(u1 & u2) / den


def _months_for(season):
    if season is None:
        return None
    if isinstance(season, str):
        try:
            return SEASONS[season.lower()]
        except KeyError:
            raise ValueError(f"unknown season {season!r}; use one of {sorted(SEASONS)} or a month list") from None
    return tuple(int(m) for m in season)


def wide_matrix(data: pd.DataFrame, value: str, season=None):
    """Replicate-by-site matrix (NaN where missing) from a long table, optionally season-filtered."""
    months = _months_for(season)
    df = data if months is None else data[data["month"].isin(months)]
    W = df.pivot_table(index=["year", "month"], columns="site_id", values=value, aggfunc="first", dropna=False)
    return W.sort_index().sort_index(axis=1)


def pairwise_chi(data: pd.DataFrame, sites: pd.DataFrame, q: float, value: str = "maximum", season=None,
                 dist=None) -> pd.DataFrame:
    """``chi_q`` for every site pair with enough joint observations.

    ``dist`` may be a square DataFrame of distances indexed by site id (for
    example topographic distances); otherwise haversine distances from the
    ``longitude``/``latitude`` columns of ``sites`` are used.
    """
    W = wide_matrix(data, value, season)
    ids = list(W.columns)
    X = W.to_numpy(float)
    if dist is None:
        s = sites.set_index("site_id").loc[ids]
        ll = s[["longitude", "latitude"]].to_numpy(float)
        D = haversine(ll[:, None, :], ll[None, :, :])
    else:
        D = dist.loc[ids, ids].to_numpy(float)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedChiWarning)
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                ok = ~(np.isnan(X[:, i]) | np.isnan(X[:, j]))
                if ok.sum() < MIN_N:
                    continue
                rows.append((ids[i], ids[j], float(D[i, j]), chi_q(X[ok, i], X[ok, j], q)))
    return pd.DataFrame(rows, columns=["site_j", "site_k", "distance_km", "chi"])


@dataclass
class ChiCurve:
    """Binned chi_q curve; ``bins`` has one row per distance bin, ordered by distance."""

    q: float
    season: str
    bins: pd.DataFrame

    COLUMNS = ("season", "q", "distance_km", "mean_distance_km", "chi", "lower", "upper", "n_pairs")

    def to_frame(self) -> pd.DataFrame:
        out = self.bins.copy()
        out.insert(0, "q", self.q)
        out.insert(0, "season", self.season)
        return out[list(self.COLUMNS)]

    def to_csv(self, path=None):
        return self.to_frame().to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def bin_pairs(pairs: pd.DataFrame, n_bins: int = 35) -> pd.DataFrame:
    """Equal-count distance bins of per-pair estimates: mean and 2.5/97.5% quantiles.

    Bin edges are distance quantiles; bins that end up empty (ties or
    undefined estimates) are merged into the next non-empty bin on the right.
    """
    est = pairs[np.isfinite(pairs.chi)]
    if len(est) < 2:
        raise ValueError("binned chi needs at least two pairs with defined estimates")
    d_all = pairs.distance_km.to_numpy(float)
    edges = np.quantile(d_all, np.linspace(0.0, 1.0, n_bins + 1))
    d = est.distance_km.to_numpy(float)
    chi = est.chi.to_numpy(float)
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, n_bins - 1)
    rows = []
    lo_edge = edges[0]
    merged = 0
    for b in range(n_bins):
        sel = idx == b
        if not sel.any():
            if b < n_bins - 1:
                merged += 1
                continue
            if rows:
                # nothing to the right: fold the trailing empty bin into the last one
                rows[-1]["distance_km"] = 0.5 * (rows[-1]["_lo"] + edges[-1])
                merged += 1
                continue
        c = chi[sel]
        rows.append({"_lo": lo_edge, "distance_km": 0.5 * (lo_edge + edges[b + 1]),
                     "mean_distance_km": float(d[sel].mean()), "chi": float(c.mean()),
                     "lower": float(np.quantile(c, 0.025)), "upper": float(np.quantile(c, 0.975)),
                     "n_pairs": int(sel.sum())})
        lo_edge = edges[b + 1]
    if merged:
        warnings.warn(f"{merged} empty distance bin(s) merged rightward", RuntimeWarning, stacklevel=2)
    return pd.DataFrame(rows).drop(columns="_lo")


def binned_chi(data: pd.DataFrame, sites: pd.DataFrame, q: float, n_bins: int = 35, season=None,
               value: str = "maximum", dist=None) -> ChiCurve:
    """Empirical chi_q against distance for one season (``None`` for all months)."""
    pairs = pairwise_chi(data, sites, q, value=value, season=season, dist=dist)
    if len(pairs) < 2:
        raise ValueError("binned chi needs at least two site pairs")
    label = "all" if season is None else (season if isinstance(season, str) else "months:" +
                                          "-".join(str(m) for m in _months_for(season)))
    return ChiCurve(float(q), label, bin_pairs(pairs, n_bins))
