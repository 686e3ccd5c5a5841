"""Hourly precipitation ingestion, monthly block maxima, station screening and covariates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.interpolate import LinearNDInterpolator

from .geo import haversine, project_km
from .smoothers import loess

DEFAULT_SENTINELS = ("", "-999")
CLIMATE_WINDOW = (1981, 2005)


class IngestError(ValueError):
    pass


@dataclass
class ParsedHourly:
    """Clean hourly records plus a row-level report of rejected input rows."""

    records: pd.DataFrame  # site_id, timestamp, precip_mm (NaN = missing)
    errors: pd.DataFrame  # row, site_id, raw_timestamp, raw_value, reason


def parse_hourly(raw: pd.DataFrame, sentinels=DEFAULT_SENTINELS) -> ParsedHourly:
    """Validate raw ``(site_id, timestamp, precip_mm)`` string columns.

    Sentinel values mark missing hours.  Unparseable timestamps or values,
    negative precipitation and conflicting duplicate timestamps are reported
    per row and dropped; they never abort the run.
    """
    missing_cols = {"site_id", "timestamp", "precip_mm"} - set(raw.columns)
    if missing_cols:
        raise IngestError(f"hourly table lacks column(s): {sorted(missing_cols)}")
    df = raw[["site_id", "timestamp", "precip_mm"]].astype(str).copy()
    df["row"] = np.arange(len(df)) + 2  # 1-based line numbers after the header
    val_str = df.precip_mm.str.strip()
    sentinel = val_str.isin({str(s).strip() for s in sentinels}) | raw["precip_mm"].isna().to_numpy()
    value = pd.to_numeric(val_str.where(~sentinel), errors="coerce")
    ts = pd.to_datetime(df.timestamp.str.strip(), errors="coerce", format="ISO8601")
    reason = pd.Series("", index=df.index)
    reason[ts.isna()] = "malformed timestamp"
    bad_val = (~sentinel) & value.isna()
    reason[(reason == "") & bad_val] = "malformed precipitation value"
    reason[(reason == "") & (value < 0)] = "negative precipitation"
    clean = pd.DataFrame({"row": df.row, "site_id": df.site_id.str.strip(), "timestamp": ts, "precip_mm": value})
    ok = reason == ""
    good = clean[ok]
    dup = good.duplicated(["site_id", "timestamp"], keep=False)
    if dup.any():
        grp = good[dup].groupby(["site_id", "timestamp"])["precip_mm"]
        conflicting = grp.transform(lambda s: s.nunique(dropna=False) > 1)
        conf_idx = conflicting[conflicting].index
        reason[conf_idx] = "conflicting duplicate timestamp"
        ok = reason == ""
        good = clean[ok].drop_duplicates(["site_id", "timestamp"])
    errors = pd.DataFrame({"row": df.row[~ok], "site_id": df.site_id[~ok], "raw_timestamp": df.timestamp[~ok],
                           "raw_value": df.precip_mm[~ok], "reason": reason[~ok]}).reset_index(drop=True)
    records = good.drop(columns="row").sort_values(["site_id", "timestamp"], kind="stable").reset_index(drop=True)
    return ParsedHourly(records, errors)


def read_hourly(path, sentinels=DEFAULT_SENTINELS) -> ParsedHourly:
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    return parse_hourly(raw, sentinels)


def _rebased_day(ts: pd.Series, day_start_hour: int) -> pd.Series:
    return (ts - pd.Timedelta(hours=day_start_hour)).dt.normalize()


def block_maxima(hourly: pd.DataFrame, day_start_hour: int = 9, day_coverage: float = 0.8) -> pd.DataFrame:
    """Monthly maxima of hourly precipitation with a day-coverage rule.

    A day runs from ``day_start_hour`` to the same hour next day and belongs
    to the month of its start.  A day is observed when at least one hour has
    a value.  A site-month is kept only when the fraction of observed days
    is at least ``day_coverage``; its maximum is the largest observed hour.
    """
    if not 0.0 < day_coverage <= 1.0:
        raise ValueError("day_coverage must lie in (0, 1]")
    df = hourly[["site_id", "timestamp", "precip_mm"]].copy()
    df = df.sort_values(["site_id", "timestamp"], kind="stable").drop_duplicates(["site_id", "timestamp"])
    df["day"] = _rebased_day(pd.to_datetime(df.timestamp), day_start_hour)
    df["year"] = df.day.dt.year
    df["month"] = df.day.dt.month
    obs = df[df.precip_mm.notna()]
    keys = ["site_id", "year", "month"]
    days = obs.groupby(keys)["day"].nunique().rename("days_observed")
    mx = obs.groupby(keys)["precip_mm"].max().rename("maximum")
    seen = df.groupby(keys).size().rename("n_rows")
    out = pd.concat([seen, days, mx], axis=1).reset_index()
    out["days_observed"] = out.days_observed.fillna(0).astype(int)
    out["days_in_month"] = pd.to_datetime(dict(year=out.year, month=out.month, day=1)).dt.days_in_month
    out["coverage"] = out.days_observed / out.days_in_month
    kept = out[out.coverage >= day_coverage - 1e-12]
    cols = ["site_id", "month", "year", "maximum", "days_observed", "days_in_month", "coverage"]
    return kept[cols].sort_values(["site_id", "year", "month"], kind="stable").reset_index(drop=True)


def read_stations(path) -> pd.DataFrame:
    """Station metadata CSV ``site_id, lon, lat, alt_m`` (returned with ``longitude``/``latitude``)."""
    st = pd.read_csv(path, dtype={"site_id": str})
    need = {"site_id", "lon", "lat", "alt_m"}
    if need - set(st.columns):
        raise IngestError(f"station table lacks column(s): {sorted(need - set(st.columns))}")
    st = st.rename(columns={"lon": "longitude", "lat": "latitude"})
    if st.site_id.duplicated().any():
        raise IngestError("duplicate site_id in station metadata")
    return st


def station_summary(hourly: pd.DataFrame) -> pd.DataFrame:
    """Record span and missing fraction per site.

    The span runs from the first to the last hour present; every hour in it
    that is absent or carries a missing value counts as missing.
    """
    rows = []
    for sid, g in hourly.groupby("site_id", sort=True):
        t0, t1 = g.timestamp.min(), g.timestamp.max()
        expected = int((t1 - t0) / pd.Timedelta(hours=1)) + 1
        observed = int(g.drop_duplicates("timestamp").precip_mm.notna().sum())
        rows.append((sid, t0, t1, expected / (24 * 365.25), 1.0 - observed / expected))
    return pd.DataFrame(rows, columns=["site_id", "start", "end", "record_years", "missing_fraction"])


def screen_stations(stations: pd.DataFrame, missing_threshold: float = 0.2, min_sep_km: float = 5.0,
                    dist: pd.DataFrame | None = None):
    """Split stations into modelled, test and excluded sets.

    ``stations`` needs ``site_id, longitude, latitude, record_years,
    missing_fraction``.  Stations missing more than ``missing_threshold`` of
    their hours are excluded.  Then, visiting close pairs from the nearest
    outward, whenever two modelled stations are closer than ``min_sep_km``
    the one with the shorter record moves to the test set (equal records:
    the later site id moves).  ``dist`` optionally supplies a site-indexed
    distance matrix (e.g. topographic) in place of haversine distances.
    """
    st = stations.sort_values("site_id", kind="stable").reset_index(drop=True)
    excluded = st[st.missing_fraction > missing_threshold]
    kept = st[st.missing_fraction <= missing_threshold].reset_index(drop=True)
    ids = kept.site_id.tolist()
    if dist is None:
        ll = kept[["longitude", "latitude"]].to_numpy(float)
        D = haversine(ll[:, None, :], ll[None, :, :]) if len(ll) else np.zeros((0, 0))
    else:
        D = dist.loc[ids, ids].to_numpy(float)
    iu, ju = np.triu_indices(len(ids), 1)
    close = D[iu, ju] < min_sep_km
    order = np.lexsort((ju[close], iu[close], D[iu, ju][close]))
    years = kept.record_years.to_numpy(float)
    modelled = np.ones(len(ids), bool)
    for i, j in zip(iu[close][order], ju[close][order]):
        if not (modelled[i] and modelled[j]):
            continue
        drop = j if years[i] >= years[j] else i
        modelled[drop] = False
    return (kept[modelled].reset_index(drop=True), kept[~modelled].reset_index(drop=True),
            excluded.reset_index(drop=True))


def _check_years(have, need, what):
    gap = sorted(set(need) - set(have))
    if gap:
        raise IngestError(f"{what} does not cover the study window; missing year(s) {_ranges(gap)}")


def _ranges(vals):
    out, start, prev = [], None, None
    for v in vals:
        if start is None:
            start = prev = v
        elif v == prev + 1:
            prev = v
        else:
            out.append(f"{start}" if start == prev else f"{start}-{prev}")
            start = prev = v
    if start is not None:
        out.append(f"{start}" if start == prev else f"{start}-{prev}")
    return ", ".join(out)


def anomaly_covariate(anomaly: pd.DataFrame, years, span: float = 0.75, degree: int = 2) -> pd.Series:
    """``A(y)``: LOESS fit of monthly anomalies against year, evaluated at each year."""
    years = np.asarray(sorted(set(int(y) for y in years)))
    _check_years(anomaly.year.astype(int).unique(), years, "anomaly series")
    x = anomaly.year.to_numpy(float)
    y = anomaly.anomaly_C.to_numpy(float)
    return pd.Series(loess(x, y, span=span, degree=degree, at=years.astype(float)), index=years, name="A")


def climate_covariates(grid: pd.DataFrame, window=CLIMATE_WINDOW):
    """Centred monthly-mean maxima ``c_mu(month, cell)`` and ``ln c_sigma^2(cell)`` over ``window``.

    Returns ``(c_mu, ln_c_sigma2)``: ``c_mu`` is indexed by ``(lon, lat)`` with
    columns 1..12; ``ln_c_sigma2`` is indexed by ``(lon, lat)``.
    """
    g = grid[(grid.year >= window[0]) & (grid.year <= window[1])]
    _check_years(g.year.astype(int).unique(), range(window[0], window[1] + 1), "climate-model grid")
    counts = g.groupby(["lon", "lat"]).size()
    n_expected = 12 * (window[1] - window[0] + 1)
    if (counts != n_expected).any():
        bad = counts[counts != n_expected].index[:3].tolist()
        raise IngestError(f"climate-model grid cells {bad} lack complete monthly series over {window[0]}-{window[1]}")
    tilde = g.groupby(["lon", "lat", "month"]).maximum.mean().unstack("month")
    c_mu = tilde - tilde.mean(axis=0)
    var = g.groupby(["lon", "lat"]).maximum.var(ddof=1)
    if (var <= 0).any():
        warnings.warn(f"{int((var <= 0).sum())} climate-model cell(s) with zero variance give ln c_sigma2 = -inf",
                      RuntimeWarning, stacklevel=2)
    with np.errstate(divide="ignore"):
        ln_var = np.log(var).rename("ln_c_sigma2")
    return c_mu, ln_var


def temperature_covariate(temps: pd.DataFrame) -> pd.Series:
    """``T(m)``: mean daily maximum temperature per calendar month, standardised over the 12 months."""
    d = pd.to_datetime(temps.date, format="ISO8601")
    means = temps.assign(month=d.dt.month).groupby("month").tmax_C.mean()
    missing = sorted(set(range(1, 13)) - set(means.index))
    if missing:
        raise IngestError(f"temperature series lacks month(s) {missing}")
    z = (means - means.mean()) / means.std(ddof=0)
    return z.rename("T")


def coastal_distance(sites: pd.DataFrame, coast: pd.DataFrame) -> np.ndarray:
    """Distance (km) from each site to the coastline polyline (ordered ``lon, lat`` vertices)."""
    V = coast[["lon", "lat"]].to_numpy(float)
    out = np.empty(len(sites))
    for i, (lon, lat) in enumerate(sites[["longitude", "latitude"]].to_numpy(float)):
        P = project_km(V, origin=(lon, lat))
        if len(P) == 1:
            out[i] = float(np.hypot(*P[0]))
            continue
        a, b = P[:-1], P[1:]
        ab = b - a
        L2 = np.einsum("ij,ij->i", ab, ab)
        t = np.clip(np.einsum("ij,ij->i", -a, ab) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
        closest = a + t[:, None] * ab
        out[i] = float(np.min(np.hypot(closest[:, 0], closest[:, 1])))
    return out


def _grid_lookup(cells: pd.Index, values: np.ndarray, sites_ll: np.ndarray, method: str):
    cl = np.column_stack([cells.get_level_values("lon"), cells.get_level_values("lat")]).astype(float)
    nearest = np.argmin(haversine(sites_ll[:, None, :], cl[None, :, :]), axis=1)
    near_vals = values[nearest]
    if method == "nearest":
        return near_vals
    if method != "linear":
        raise ValueError("lookup must be 'nearest' or 'linear'")
    interp = LinearNDInterpolator(cl, values)(sites_ll)
    return np.where(np.isnan(interp), near_vals, interp)


@dataclass
class CovariateBundle:
    A: pd.Series  # by year
    c_mu: pd.DataFrame  # (lon, lat) x month
    ln_c_sigma2: pd.Series  # by (lon, lat)
    T: pd.Series  # by month 1..12
    sites: pd.DataFrame  # site_id, D, Alt, ln_c_sigma2, c_mu_1..c_mu_12

    def attach(self, maxima: pd.DataFrame) -> pd.DataFrame:
        """Add covariate columns to a maxima table (rows with unknown sites or years raise)."""
        out = maxima.copy()
        missing_years = sorted(set(out.year.astype(int)) - set(self.A.index))
        if missing_years:
            raise IngestError(f"anomaly covariate missing year(s) {_ranges(missing_years)}")
        site = self.sites.set_index("site_id")
        unknown = sorted(set(out.site_id) - set(site.index))
        if unknown:
            raise IngestError(f"no covariates for site(s) {unknown[:5]}")
        out["A"] = self.A.loc[out.year.astype(int)].to_numpy()
        cm = site[[f"c_mu_{m}" for m in range(1, 13)]].loc[out.site_id].to_numpy()
        out["c_mu"] = cm[np.arange(len(out)), out.month.astype(int).to_numpy() - 1]
        out["ln_c_sigma2"] = site.ln_c_sigma2.loc[out.site_id].to_numpy()
        out["T"] = self.T.loc[out.month.astype(int)].to_numpy()
        out["D"] = site.D.loc[out.site_id].to_numpy()
        out["Alt"] = site.Alt.loc[out.site_id].to_numpy()
        for c in ("longitude", "latitude"):
            if c not in out and c in site:
                out[c] = site[c].loc[out.site_id].to_numpy()
        return out


def build_covariates(anomaly: pd.DataFrame, grid: pd.DataFrame, temps: pd.DataFrame, coast: pd.DataFrame,
                     stations: pd.DataFrame, years, window=CLIMATE_WINDOW, lookup: str = "nearest",
                     span: float = 0.75, degree: int = 2) -> CovariateBundle:
    """Assemble all site, month and year covariates for the study ``years``."""
    A = anomaly_covariate(anomaly, years, span, degree)
    c_mu, ln_var = climate_covariates(grid, window)
    T = temperature_covariate(temps)
    ll = stations[["longitude", "latitude"]].to_numpy(float)
    site = pd.DataFrame({"site_id": stations.site_id.to_numpy(), "longitude": ll[:, 0], "latitude": ll[:, 1]})
    site["D"] = coastal_distance(stations, coast)
    site["Alt"] = stations.alt_m.to_numpy(float)
    site["ln_c_sigma2"] = _grid_lookup(ln_var.index, ln_var.to_numpy(), ll, lookup)
    cm = c_mu.reindex(ln_var.index)
    for m in range(1, 13):
        site[f"c_mu_{m}"] = _grid_lookup(cm.index, cm[m].to_numpy(), ll, lookup)
    if site.isna().any().any():
        warnings.warn("some site covariates are missing", RuntimeWarning, stacklevel=2)
    return CovariateBundle(A, c_mu, ln_var, T, site)
