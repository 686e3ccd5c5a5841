"""Spatio-temporal cross-validation folds, CV scores and candidate ranking."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..evd import crps_gev, gev_logpdf
from ..geo import kmeans, project_km
from .fitting import RESPONSE, ConvergenceError, fit
from .formula import ModelFormula, build_design

SMOOTHING_GRID = tuple(10.0 ** np.arange(-3, 4))


@dataclass
class FoldAssignment:
    """Per-row spatial cluster (1..n_spatial), temporal cluster (1..n_temporal) and fold id.

    Fold ``(s, t)`` is numbered ``(s - 1) * n_temporal + t``.
    """

    spatial: np.ndarray
    temporal: np.ndarray
    n_spatial: int
    n_temporal: int

    @property
    def fold(self) -> np.ndarray:
        return (self.spatial - 1) * self.n_temporal + self.temporal

    @property
    def n_folds(self) -> int:
        return self.n_spatial * self.n_temporal

    def held_out(self, k: int) -> np.ndarray:
        return self.fold == k

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"spatial_cluster": self.spatial, "temporal_cluster": self.temporal,
                             "fold": self.fold})


def make_folds(table: pd.DataFrame, n_spatial: int = 4, n_temporal: int = 3, seed: int = 0) -> FoldAssignment:
    """Intersect k-means site clusters with interleaved month clusters.

    Sites are clustered on a local km projection of ``(longitude, latitude)``;
    temporal cluster ``k`` holds months ``k, k + n_temporal, ...``.
    """
    sites = table[["site_id", "longitude", "latitude"]].drop_duplicates("site_id").sort_values("site_id", kind="stable")
    if len(sites) < n_spatial:
        raise ValueError(f"{len(sites)} sites cannot form {n_spatial} spatial clusters")
    labels = kmeans(project_km(sites[["longitude", "latitude"]].to_numpy(float)), k=n_spatial, seed=seed)
    lookup = dict(zip(sites.site_id.tolist(), (labels + 1).tolist()))
    spatial = np.array([lookup[s] for s in table.site_id.tolist()], dtype=int)
    temporal = (table["month"].to_numpy(int) - 1) % n_temporal + 1
    return FoldAssignment(spatial, temporal, n_spatial, n_temporal)


@dataclass
class CVResult:
    model: str
    nll: float
    crps: float
    n_valid: int
    n_folds: int
    n_columns: int
    per_fold: pd.DataFrame


def _score_fold(formula, table, folds, k, smoothing, response):
    test = folds.held_out(k)
    train_t = table.loc[~test].reset_index(drop=True)
    test_t = table.loc[test].reset_index(drop=True)
    if len(test_t) == 0:
        return k, np.nan, np.nan, "empty fold"
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            f = fit(build_design(formula, train_t), train_t, smoothing=smoothing, response=response)
            p = f.predict(test_t, warn_extrapolation=False)
            y = test_t[response].to_numpy(float)
            nll = -float(np.mean(gev_logpdf(y, p)))
            crps = float(np.mean(crps_gev(y, p)))
    except (ConvergenceError, ValueError, np.linalg.LinAlgError) as exc:
        return k, np.nan, np.nan, f"{type(exc).__name__}: {exc}"
    if not (np.isfinite(nll) and np.isfinite(crps)):
        return k, nll, crps, "held-out rows outside fitted support"
    return k, nll, crps, ""


def cv_score(formula: ModelFormula, table: pd.DataFrame, folds: FoldAssignment, smoothing=None,
             response: str = RESPONSE, workers: int = 1) -> CVResult:
    """Fold-averaged held-out mean negative log-likelihood and mean CRPS (both lower is better).

    Each fold is fitted on its complement.  Folds whose fit fails are skipped
    with a warning; the averages are unweighted over the remaining folds.
    """
    ks = list(range(1, folds.n_folds + 1))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(lambda k: _score_fold(formula, table, folds, k, smoothing, response), ks))
    else:
        rows = [_score_fold(formula, table, folds, k, smoothing, response) for k in ks]
    per_fold = pd.DataFrame(rows, columns=["fold", "nLL", "CRPS", "failure"])
    bad = per_fold.failure != ""
    for _, r in per_fold[bad].iterrows():
        warnings.warn(f"model {formula.name}: fold {r.fold} skipped ({r.failure})", RuntimeWarning, stacklevel=2)
    ok = per_fold[~bad]
    n_cols = build_design(formula, table).n_cols
    nll = float(ok.nLL.mean()) if len(ok) else np.nan
    crps = float(ok.CRPS.mean()) if len(ok) else np.nan
    return CVResult(formula.name, nll, crps, int(len(ok)), folds.n_folds, n_cols, per_fold)


def _rank(results):
    key = [(np.inf if np.isnan(r.crps) else r.crps, np.inf if np.isnan(r.nll) else r.nll, r.n_columns, i)
           for i, r in enumerate(results)]
    return [results[i] for *_, i in sorted(key)]


def select_smoothing(formula: ModelFormula, table: pd.DataFrame, folds: FoldAssignment,
                     grid=SMOOTHING_GRID, response: str = RESPONSE, workers: int = 1):
    """Common smoothing multiplier chosen from ``grid`` by CV (CRPS, then nLL).

    Returns ``(best lambda, DataFrame of scores per lambda)``.
    """
    rows = []
    best = None
    for lam in grid:
        r = cv_score(formula, table, folds, smoothing=float(lam), response=response, workers=workers)
        rows.append({"lambda": float(lam), "nLL": r.nll, "CRPS": r.crps, "n_valid_folds": r.n_valid})
        key = (np.inf if np.isnan(r.crps) else r.crps, np.inf if np.isnan(r.nll) else r.nll)
        if best is None or key < best[0]:
            best = (key, float(lam))
    return best[1], pd.DataFrame(rows)


def forward_select(candidates, table: pd.DataFrame, folds: FoldAssignment, smoothing=None,
                   response: str = RESPONSE, workers: int = 1) -> pd.DataFrame:
    """Score every candidate formula and rank by CRPS, then nLL, then fewer columns."""
    results = [cv_score(f, table, folds, smoothing=smoothing, response=response, workers=workers)
               for f in candidates]
    ranked = _rank(results)
    return pd.DataFrame({
        "rank": np.arange(1, len(ranked) + 1),
        "model": [r.model for r in ranked],
        "nLL": [r.nll for r in ranked],
        "CRPS": [r.crps for r in ranked],
        "n_columns": [r.n_columns for r in ranked],
        "n_valid_folds": [r.n_valid for r in ranked],
    })
