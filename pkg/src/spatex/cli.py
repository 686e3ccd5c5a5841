"""Command-line pipeline: ingestion, marginal GAMs, max-id dependence, chi curves, return levels.

Every subcommand reads its options from flags and, optionally, from a JSON
config (``--config``).  Top-level config keys apply to any subcommand that
declares that option; a section named after the subcommand holds options for
that subcommand only.  Flags override the config.  Every output carries a
metadata header with the tool version, a hash of the effective configuration
and the seed.

Exit codes: 0 success, 1 computational failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from . import __version__
from .empirical import SEASONS, binned_chi
from .evd import GevParams, ReturnSpec, pit, relative_change, return_level
from .gam import ModelFormula, cv_score, fit as fit_gam, forward_select, load_formulas, make_folds, select_smoothing
from .gam.fitting import ConvergenceError, MarginalFit
from .geo import distance_matrix, read_dem_csv, read_esri_ascii
from .ingest import (IngestError, block_maxima, build_covariates, read_hourly, read_stations, screen_stations,
                     station_summary)
from .maxid import FitError, MaxIdFit, MaxIdParams, PairSet, model_chi
from .maxid import fit as fit_maxid
from .simulate import synthetic_maxima
from .smoothers import ConfigurationError


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: object = str
    default: object = None
    help: str = ""
    required: bool = False
    nargs: str | None = None
    flag: bool = False
    output: bool = False

    @property
    def dest(self):
        return self.name.replace("-", "_")


def _o(name, type=str, default=None, help="", **kw):
    return Opt(name, type, default, help, **kw)


SEED = _o("seed", int, 0, "random seed")
WORKERS = _o("workers", int, 1, "worker threads (results do not depend on this)")
OUT = _o("out", str, None, "output file", required=True, output=True)

COMMANDS = {
    "ingest": ("Parse hourly records, report bad rows, summarise and screen stations.", [
        _o("hourly", help="hourly CSV (site_id,timestamp,precip_mm)", required=True),
        _o("stations", help="station metadata CSV (site_id,lon,lat,alt_m)", required=True),
        _o("sentinels", str, ["", "-999"], "values marking a missing hour", nargs="*"),
        _o("missing-threshold", float, 0.2, "exclude stations missing more than this fraction of hours"),
        _o("min-sep-km", float, 5.0, "minimum separation between modelled stations"),
        _o("dem", help="optional DEM (ESRI ASCII .asc or CSV lon,lat,elev) for topographic separations"),
        _o("outdir", help="output directory", required=True, output=True),
    ]),
    "blockmax": ("Monthly maxima with the day-coverage rule.", [
        _o("hourly", help="clean hourly CSV from ingest", required=True),
        _o("stations", help="screened stations CSV (adds coordinates, filters by role)"),
        _o("role", str, "modelled", "station role to keep when the stations table has a role column"),
        _o("day-start-hour", int, 9, "hour at which a day starts"),
        _o("day-coverage", float, 0.8, "minimum fraction of observed days for a month to be kept"),
        OUT,
    ]),
    "covariates": ("Attach A, c_mu, ln c_sigma^2, T, D and Alt to a maxima table.", [
        _o("maxima", help="maxima CSV", required=True),
        _o("stations", help="station CSV with coordinates and alt_m", required=True),
        _o("anomaly", help="anomaly CSV (year,month,anomaly_C)", required=True),
        _o("grid", help="climate-model grid CSV (lon,lat,month,year,maximum)", required=True),
        _o("temperature", help="temperature CSV (site_id,date,tmax_C)", required=True),
        _o("coast", help="coastline polyline CSV (lon,lat)", required=True),
        _o("lookup", str, "nearest", "grid-to-site lookup: nearest or linear"),
        _o("window-start", int, 1981, "first climate-model year"),
        _o("window-end", int, 2005, "last climate-model year"),
        _o("loess-span", float, 0.75, "LOESS span for the anomaly covariate"),
        OUT,
    ]),
    "fit-marginal": ("Fit one GEV additive model.", [
        _o("maxima", help="maxima CSV with covariates", required=True),
        _o("formula", help="formula JSON (one formula or a list)", required=True),
        _o("model", help="model name to pick from a formula list (default: first)"),
        _o("smoothing", float, 1.0, "common smoothing multiplier"),
        _o("coef-out", help="optional CSV of reported coefficients", output=True),
        OUT,
    ]),
    "cv": ("Cross-validated nLL and CRPS for candidate formulas.", [
        _o("maxima", help="maxima CSV with covariates", required=True),
        _o("formulas", help="formula JSON list", required=True),
        _o("smoothing", float, 1.0, "common smoothing multiplier"),
        _o("n-spatial", int, 4, "number of spatial clusters"),
        _o("n-temporal", int, 3, "number of temporal clusters"),
        _o("folds-out", help="optional CSV of fold assignments", output=True),
        SEED, WORKERS, OUT,
    ]),
    "select": ("Rank candidate formulas by CV (CRPS, then nLL, then fewer columns).", [
        _o("maxima", help="maxima CSV with covariates", required=True),
        _o("formulas", help="formula JSON list", required=True),
        _o("smoothing", float, 1.0, "common smoothing multiplier when no grid is given"),
        _o("smoothing-grid", float, None, "choose each candidate's smoothing from these values by CV", nargs="*"),
        _o("n-spatial", int, 4, "number of spatial clusters"),
        _o("n-temporal", int, 3, "number of temporal clusters"),
        SEED, WORKERS, OUT,
    ]),
    "transform-uniform": ("Probability integral transform of maxima through a fitted model.", [
        _o("maxima", help="maxima CSV with covariates", required=True),
        _o("fit", help="fit JSON from fit-marginal", required=True),
        OUT,
    ]),
    "fit-dependence": ("Fit the max-id dependence model by pairwise likelihood.", [
        _o("uniform", help="uniform CSV (site_id,month,year,u[,T,longitude,latitude])", required=True),
        _o("stations", help="station CSV with coordinates when the uniform table lacks them"),
        _o("dem", help="optional DEM for topographic distances"),
        _o("seasonal", bool, False, "let beta and lambda depend on T", flag=True),
        _o("nu", float, 1.0, "smoothness of the correlation profile"),
        _o("estimate-nu", bool, False, "estimate nu as well", flag=True),
        _o("cutoff-km", float, None, "only pairs closer than this"),
        _o("nodes", int, 48, "quadrature nodes"),
        _o("clic", bool, True, "compute CLIC", flag=True),
        _o("pairs-out", help="optional CSV of the pairs used", output=True),
        WORKERS, OUT,
    ]),
    "chi": ("Empirical binned chi_q curves, optionally with the fitted model overlaid.", [
        _o("data", help="uniform or maxima CSV", required=True),
        _o("value", str, None, "column to analyse (default: u if present, else maximum)"),
        _o("stations", help="station CSV with coordinates when the data lack them"),
        _o("dem", help="optional DEM for topographic distances"),
        _o("q", float, [0.95, 0.99, 0.999], "probability levels", nargs="*"),
        _o("season", str, ["all"], "season names or month lists like 6,7,8", nargs="*"),
        _o("n-bins", int, 35, "number of equal-count distance bins"),
        _o("dependence", help="optional dependence fit JSON for model overlay"),
        OUT,
    ]),
    "return-levels": ("Effective return levels per row, optionally relative to a reference year.", [
        _o("maxima", help="covariate rows (maxima CSV schema)", required=True),
        _o("fit", help="fit JSON from fit-marginal", required=True),
        _o("period", int, 100, "return period in years"),
        _o("block-frequency", int, 12, "blocks per year"),
        _o("reference-year", int, None, "year for relative change (same site and month)"),
        OUT,
    ]),
    "simulate": ("Synthetic maxima table with GEV margins and optional max-id dependence.", [
        _o("n-sites", int, 49, "number of sites"),
        _o("n-years", int, 33, "number of years of monthly maxima"),
        _o("start-year", int, 1988, "first year"),
        _o("independent", bool, False, "independent sites instead of max-id dependence", flag=True),
        _o("beta", float, 0.5, "beta at T = 0"),
        _o("lam", float, 30.0, "lambda (km) at T = 0"),
        _o("alpha1-beta", float, 0.0, "slope of log beta in T"),
        _o("alpha1-lambda", float, 0.0, "slope of log lambda in T"),
        _o("nu", float, 1.0, "correlation smoothness"),
        _o("mu0", float, 20.0, "location intercept"),
        _o("slope-a", float, 2.0, "location slope on A"),
        _o("seasonal-amp", float, 3.0, "amplitude of the seasonal location cycle"),
        _o("sigma", float, 4.0, "scale"),
        _o("xi", float, 0.1, "shape"),
        _o("stations-out", help="optional station CSV (site_id,lon,lat,alt_m)", output=True),
        SEED, WORKERS, OUT,
    ]),
    "diagnose": ("PIT uniformity per site and model-versus-empirical chi overlays.", [
        _o("maxima", help="maxima CSV with covariates", required=True),
        _o("fit", help="fit JSON from fit-marginal", required=True),
        _o("dependence", help="optional dependence fit JSON"),
        _o("q", float, [0.98], "probability levels for the chi overlay", nargs="*"),
        _o("season", str, ["all"], "seasons for the chi overlay", nargs="*"),
        _o("n-bins", int, 35, "number of distance bins"),
        _o("chi-out", help="CSV for the chi overlay (requires --dependence)", output=True),
        OUT,
    ]),
}
_NON_ECHO = {"workers", "config"}


# ----------------------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatex", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"spatex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (desc, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=desc, description=desc)
        p.add_argument("--config", help="JSON run configuration")
        for o in opts:
            if o.flag:
                p.add_argument(f"--{o.name}", dest=o.dest, action=argparse.BooleanOptionalAction, default=None,
                               help=o.help)
            else:
                p.add_argument(f"--{o.name}", dest=o.dest, type=o.type, nargs=o.nargs, default=None,
                               help=o.help + ("" if o.default is None else f" (default: {o.default})"))
    return parser


def _coerce(o: Opt, v):
    try:
        if v is None:
            return None
        if o.nargs:
            vals = v if isinstance(v, list) else [v]
            return [o.type(x) for x in vals]
        if o.flag:
            if not isinstance(v, bool):
                raise TypeError
            return v
        return o.type(v)
    except (TypeError, ValueError):
        raise UsageError(f"config value for {o.dest!r} has the wrong type: {v!r}") from None


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the JSON config and explicit flags; validate."""
    opts = COMMANDS[command][1]
    by_dest = {o.dest: o for o in opts}
    cfg = {o.dest: o.default for o in opts}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        known = {o.dest for _, os_ in COMMANDS.values() for o in os_}
        for k, v in raw.items():
            if k in COMMANDS:
                continue
            kk = k.replace("-", "_")
            if kk not in known:
                raise UsageError(f"unknown config key {k!r}")
            if kk in by_dest:
                cfg[kk] = _coerce(by_dest[kk], v)
        section = raw.get(command, {})
        if not isinstance(section, dict):
            raise UsageError(f"config section {command!r} must be an object")
        for k, v in section.items():
            kk = k.replace("-", "_")
            if kk not in by_dest:
                raise UsageError(f"unknown option {k!r} in config section {command!r}")
            cfg[kk] = _coerce(by_dest[kk], v)
    for o in opts:
        v = getattr(args, o.dest)
        if v is not None:
            cfg[o.dest] = v
    missing = [o.name for o in opts if o.required and cfg[o.dest] is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s): {', '.join('--' + m for m in missing)}")
    if "workers" in cfg and cfg["workers"] < 1:
        raise UsageError("--workers must be at least 1")
    return cfg


def metadata(command: str, cfg: dict) -> dict:
    """Header fields: version, command, seed and the configuration with its hash.

    Output paths and the worker count are left out of the echoed
    configuration so that outputs do not depend on where they are written or
    how many threads produced them.
    """
    outputs = {o.dest for o in COMMANDS[command][1] if o.output}
    echo = {k: v for k, v in sorted(cfg.items()) if k not in _NON_ECHO and k not in outputs}
    text = json.dumps(echo, sort_keys=True, separators=(",", ":"))
    return {"tool": f"spatex {__version__}", "command": command,
            "config_sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
            "seed": cfg.get("seed"), "config": echo}


# ----------------------------------------------------------------------------- I/O

def _header(meta) -> str:
    lines = [f"# tool: {meta['tool']}", f"# command: {meta['command']}",
             f"# config_sha256: {meta['config_sha256']}", f"# seed: {'none' if meta['seed'] is None else meta['seed']}",
             "# config: " + json.dumps(meta["config"], sort_keys=True, separators=(",", ":"))]
    return "\n".join(lines) + "\n"


def write_csv(df: pd.DataFrame, path, meta) -> None:
    buf = io.StringIO()
    df.to_csv(buf, index=False, lineterminator="\n")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_header(meta))
        fh.write(buf.getvalue())


def write_json(obj: dict, path, meta) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps({"metadata": meta, **obj}, indent=2, sort_keys=True, default=_json_default)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def read_csv(path, **kw) -> pd.DataFrame:
    """Read a CSV, skipping a leading ``#`` metadata header if present."""
    try:
        with open(path, encoding="utf-8") as fh:
            n = 0
            for line in fh:
                if not line.startswith("#"):
                    break
                n += 1
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    dtype = {"site_id": str, "site_j": str, "site_k": str}
    dtype.update(kw.pop("dtype", {}))
    return pd.read_csv(path, skiprows=n, dtype=dtype, **kw)


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _stations(path) -> pd.DataFrame:
    st = read_csv(path)
    st = st.rename(columns={"lon": "longitude", "lat": "latitude"})
    if not {"site_id", "longitude", "latitude"} <= set(st.columns):
        raise UsageError(f"{path}: station table needs site_id and coordinates")
    return st


def _dem(path):
    if path is None:
        return None
    return read_esri_ascii(path) if str(path).lower().endswith(".asc") else read_dem_csv(path)


def _site_coords(table: pd.DataFrame, stations_path):
    if stations_path is not None:
        st = _stations(stations_path)
    elif {"longitude", "latitude"} <= set(table.columns):
        st = table[["site_id", "longitude", "latitude"]].drop_duplicates("site_id")
    else:
        raise UsageError("site coordinates needed: add longitude/latitude columns or pass --stations")
    return st.sort_values("site_id", kind="stable").reset_index(drop=True)


def _dist_frame(st: pd.DataFrame, dem) -> pd.DataFrame:
    D = distance_matrix(st[["longitude", "latitude"]].to_numpy(float), dem)
    ids = st.site_id.tolist()
    return pd.DataFrame(D, index=ids, columns=ids)


def _formulas(path, name=None):
    try:
        fs = load_formulas(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read formulas from {path}: {exc}") from None
    if name is None:
        return fs
    pick = [f for f in fs if f.name == name]
    if not pick:
        raise UsageError(f"model {name!r} not found in {path}")
    return pick


def _load_fit(path) -> MarginalFit:
    d = read_json(path)
    return MarginalFit.from_dict(d.get("fit", d))


def _load_dep(path) -> MaxIdFit:
    d = read_json(path)
    return MaxIdFit.from_dict(d.get("fit", d))


def _season_arg(s):
    if s in SEASONS:
        return s
    try:
        return [int(m) for m in str(s).split(",")]
    except ValueError:
        raise UsageError(f"unknown season {s!r}") from None


def _month_T_table(table: pd.DataFrame):
    if "T" not in table.columns:
        return None
    g = table.groupby("month")["T"]
    if (g.nunique() > 1).any():
        raise UsageError("column T must take one value per calendar month")
    T = g.first()
    if set(T.index) != set(range(1, 13)):
        return {int(m): float(v) for m, v in T.items()}
    return T.sort_index().to_numpy(float)


# ----------------------------------------------------------------------------- commands

def cmd_ingest(cfg, meta):
    parsed = read_hourly(cfg["hourly"], tuple(cfg["sentinels"]))
    st = read_stations(cfg["stations"])
    summ = station_summary(parsed.records)
    st = st.merge(summ, on="site_id", how="left")
    st["record_years"] = st.record_years.fillna(0.0)
    st["missing_fraction"] = st.missing_fraction.fillna(1.0)
    dem = _dem(cfg["dem"])
    dist = _dist_frame(st.sort_values("site_id", kind="stable"), dem) if dem is not None else None
    modelled, test, excluded = screen_stations(st, cfg["missing_threshold"], cfg["min_sep_km"], dist)
    roles = pd.concat([modelled.assign(role="modelled"), test.assign(role="test"),
                       excluded.assign(role="excluded")]).sort_values("site_id", kind="stable")
    out = Path(cfg["outdir"])
    rec = parsed.records.copy()
    rec["timestamp"] = rec.timestamp.dt.strftime("%Y-%m-%d %H:%M:%S")
    write_csv(rec, out / "hourly_clean.csv", meta)
    write_csv(parsed.errors, out / "ingest_errors.csv", meta)
    roles = roles.copy()
    for c in ("start", "end"):
        roles[c] = pd.to_datetime(roles[c]).dt.strftime("%Y-%m-%d %H:%M:%S")
    write_csv(roles.reset_index(drop=True), out / "stations_screened.csv", meta)
    if len(parsed.errors):
        print(f"ingest: {len(parsed.errors)} row(s) rejected; see {out / 'ingest_errors.csv'}", file=sys.stderr)


def cmd_blockmax(cfg, meta):
    h = read_csv(cfg["hourly"])
    h["timestamp"] = pd.to_datetime(h.timestamp, format="ISO8601")
    h["precip_mm"] = pd.to_numeric(h.precip_mm)
    if cfg["stations"]:
        st = _stations(cfg["stations"])
        if "role" in st.columns:
            st = st[st.role == cfg["role"]]
        h = h[h.site_id.isin(set(st.site_id))]
    mx = block_maxima(h, cfg["day_start_hour"], cfg["day_coverage"])
    if cfg["stations"]:
        mx = mx.merge(st[["site_id", "longitude", "latitude"]], on="site_id", how="left")
        mx = mx[["site_id", "longitude", "latitude"] + [c for c in mx.columns if c not in
                                                       ("site_id", "longitude", "latitude")]]
    write_csv(mx, cfg["out"], meta)


def cmd_covariates(cfg, meta):
    mx = read_csv(cfg["maxima"])
    st = _stations(cfg["stations"])
    if "alt_m" not in st.columns:
        raise UsageError("station table needs alt_m")
    st = st[st.site_id.isin(set(mx.site_id))].sort_values("site_id", kind="stable")
    bundle = build_covariates(read_csv(cfg["anomaly"]), read_csv(cfg["grid"]), read_csv(cfg["temperature"]),
                              read_csv(cfg["coast"]), st, mx.year.unique(),
                              window=(cfg["window_start"], cfg["window_end"]), lookup=cfg["lookup"],
                              span=cfg["loess_span"])
    write_csv(bundle.attach(mx), cfg["out"], meta)


def _fit_one(formula, table, smoothing):
    try:
        return fit_gam(formula, table, smoothing=smoothing)
    except ConvergenceError as exc:
        raise RuntimeError(f"marginal fit of {formula.name} did not converge: {exc}") from exc


def cmd_fit_marginal(cfg, meta):
    table = read_csv(cfg["maxima"])
    formula = _formulas(cfg["formula"], cfg["model"])[0]
    f = _fit_one(formula, table, cfg["smoothing"])
    write_json({"fit": f.to_dict()}, cfg["out"], meta)
    if cfg["coef_out"]:
        rows = []
        for p, blocks in f.coefficients().items():
            for lab, b in blocks.items():
                for i, (c, s) in enumerate(zip(b["coef"], b["se"])):
                    rows.append((p, lab, b["kind"], i + 1, c, s))
        write_csv(pd.DataFrame(rows, columns=["parameter", "term", "kind", "index", "coef", "se"]),
                  cfg["coef_out"], meta)


def _folds(table, cfg):
    return make_folds(table, cfg["n_spatial"], cfg["n_temporal"], seed=cfg["seed"])


def cmd_cv(cfg, meta):
    table = read_csv(cfg["maxima"])
    folds = _folds(table, cfg)
    rows = []
    for f in _formulas(cfg["formulas"]):
        r = cv_score(f, table, folds, smoothing=cfg["smoothing"], workers=cfg["workers"])
        rows.append((r.model, r.nll, r.crps, r.n_valid))
    write_csv(pd.DataFrame(rows, columns=["model", "nLL", "CRPS", "n_valid_folds"]), cfg["out"], meta)
    if cfg["folds_out"]:
        fr = folds.to_frame()
        fr.insert(0, "year", table.year.to_numpy())
        fr.insert(0, "month", table.month.to_numpy())
        fr.insert(0, "site_id", table.site_id.to_numpy())
        write_csv(fr, cfg["folds_out"], meta)


def cmd_select(cfg, meta):
    table = read_csv(cfg["maxima"])
    folds = _folds(table, cfg)
    cands = _formulas(cfg["formulas"])
    if cfg["smoothing_grid"]:
        parts = []
        for f in cands:
            lam, _ = select_smoothing(f, table, folds, grid=cfg["smoothing_grid"], workers=cfg["workers"])
            rep = forward_select([f], table, folds, smoothing=lam, workers=cfg["workers"])
            parts.append(rep.assign(smoothing=lam))
        rep = pd.concat(parts, ignore_index=True)
        key = rep[["CRPS", "nLL", "n_columns"]].fillna(np.inf)
        order = np.lexsort((np.arange(len(rep)), key.n_columns, key.nLL, key.CRPS))
        rep = rep.iloc[order].reset_index(drop=True)
        rep["rank"] = np.arange(1, len(rep) + 1)
    else:
        rep = forward_select(cands, table, folds, smoothing=cfg["smoothing"], workers=cfg["workers"])
        rep["smoothing"] = cfg["smoothing"]
    write_csv(rep[["rank", "model", "smoothing", "nLL", "CRPS", "n_columns", "n_valid_folds"]], cfg["out"], meta)


def cmd_transform_uniform(cfg, meta):
    table = read_csv(cfg["maxima"])
    f = _load_fit(cfg["fit"])
    p = f.predict(table)
    out = table[[c for c in ("site_id", "longitude", "latitude", "month", "year", "maximum", "T")
                 if c in table.columns]].copy()
    out["mu"], out["sigma"], out["xi"] = p.mu, p.sigma, p.xi
    out["u"] = pit(table.maximum.to_numpy(float), p)
    write_csv(out, cfg["out"], meta)


def cmd_fit_dependence(cfg, meta):
    data = read_csv(cfg["uniform"])
    st = _site_coords(data, cfg["stations"])
    D = _dist_frame(st, _dem(cfg["dem"]))
    pairs = PairSet.all_pairs(D.index.tolist(), D.to_numpy(), cfg["cutoff_km"])
    T = _month_T_table(data)
    if T is None:
        if cfg["seasonal"]:
            raise UsageError("seasonal dependence needs a T column in the uniform table")
        T = np.zeros(12)
    res = fit_maxid(data, pairs, T, seasonal=cfg["seasonal"], nu=cfg["nu"], estimate_nu=cfg["estimate_nu"],
                    k=cfg["nodes"], workers=cfg["workers"], compute_clic=cfg["clic"])
    write_json({"fit": res.to_dict()}, cfg["out"], meta)
    if cfg["pairs_out"]:
        write_csv(pairs.to_frame(), cfg["pairs_out"], meta)


def _chi_curves(data, value, st, dist, qs, seasons, n_bins, dep: MaxIdFit | None):
    T = _month_T_table(data)
    frames = []
    for season in seasons:
        s = _season_arg(season)
        for q in qs:
            curve = binned_chi(data, st, q, n_bins=n_bins, season=None if s == "all" else s, value=value, dist=dist)
            fr = curve.to_frame()
            if dep is not None:
                months = SEASONS["all"] if s == "all" else (SEASONS[s] if isinstance(s, str) else s)
                if T is None:
                    Tm = np.zeros(len(months))
                elif isinstance(T, dict):
                    Tm = np.array([T[m] for m in months if m in T])
                else:
                    Tm = T[np.asarray(months) - 1]
                d = fr.mean_distance_km.to_numpy(float)
                fr["model_chi"] = np.mean([model_chi(d, t, dep.params, q) for t in Tm], axis=0)
            frames.append(fr)
    return pd.concat(frames, ignore_index=True)


def cmd_chi(cfg, meta):
    data = read_csv(cfg["data"])
    value = cfg["value"] or ("u" if "u" in data.columns else "maximum")
    st = _site_coords(data, cfg["stations"])
    dem = _dem(cfg["dem"])
    dist = _dist_frame(st, dem) if dem is not None else None
    dep = _load_dep(cfg["dependence"]) if cfg["dependence"] else None
    out = _chi_curves(data, value, st, dist, cfg["q"], cfg["season"], cfg["n_bins"], dep)
    write_csv(out, cfg["out"], meta)


def cmd_return_levels(cfg, meta):
    table = read_csv(cfg["maxima"])
    f = _load_fit(cfg["fit"])
    p = f.predict(table)
    spec = ReturnSpec(cfg["period"], cfg["block_frequency"])
    out = table[[c for c in ("site_id", "longitude", "latitude", "month", "year") if c in table.columns]].copy()
    out["return_level"] = return_level(spec, p)
    if cfg["reference_year"] is not None:
        ref = out[out.year == cfg["reference_year"]].set_index(["site_id", "month"]).return_level
        if ref.empty:
            raise UsageError(f"no rows for reference year {cfg['reference_year']}")
        r = ref.reindex(pd.MultiIndex.from_arrays([out.site_id, out.month])).to_numpy()
        out["relative_change_pct"] = relative_change(out.return_level.to_numpy(), r)
    write_csv(out, cfg["out"], meta)


def cmd_simulate(cfg, meta):
    dep = None
    if not cfg["independent"]:
        dep = MaxIdParams(float(np.log(cfg["beta"])), cfg["alpha1_beta"], float(np.log(cfg["lam"])),
                          cfg["alpha1_lambda"], cfg["nu"])
    tab = synthetic_maxima(cfg["n_sites"], cfg["n_years"], cfg["seed"], dep, cfg["mu0"], cfg["slope_a"],
                           cfg["seasonal_amp"], cfg["sigma"], cfg["xi"], cfg["start_year"], workers=cfg["workers"])
    write_csv(tab, cfg["out"], meta)
    if cfg["stations_out"]:
        st = tab[["site_id", "longitude", "latitude"]].drop_duplicates("site_id")
        st = st.rename(columns={"longitude": "lon", "latitude": "lat"}).assign(alt_m=0.0)
        write_csv(st, cfg["stations_out"], meta)


def cmd_diagnose(cfg, meta):
    table = read_csv(cfg["maxima"])
    f = _load_fit(cfg["fit"])
    p = f.predict(table)
    u = pit(table.maximum.to_numpy(float), p)
    rows = []
    for sid, uu in pd.Series(u).groupby(table.site_id.to_numpy(), sort=True):
        ks = stats.kstest(uu.to_numpy(), "uniform")
        rows.append((sid, len(uu), ks.statistic, ks.pvalue))
    ks = stats.kstest(u, "uniform")
    rows.append(("ALL", len(u), ks.statistic, ks.pvalue))
    write_csv(pd.DataFrame(rows, columns=["site_id", "n", "ks_statistic", "ks_pvalue"]), cfg["out"], meta)
    if cfg["chi_out"]:
        if not cfg["dependence"]:
            raise UsageError("--chi-out needs --dependence")
        dep = _load_dep(cfg["dependence"])
        data = table.assign(u=u)
        st = _site_coords(data, None)
        out = _chi_curves(data, "u", st, None, cfg["q"], cfg["season"], cfg["n_bins"], dep)
        write_csv(out, cfg["chi_out"], meta)


HANDLERS = {
    "ingest": cmd_ingest, "blockmax": cmd_blockmax, "covariates": cmd_covariates,
    "fit-marginal": cmd_fit_marginal, "cv": cmd_cv, "select": cmd_select,
    "transform-uniform": cmd_transform_uniform, "fit-dependence": cmd_fit_dependence, "chi": cmd_chi,
    "return-levels": cmd_return_levels, "simulate": cmd_simulate, "diagnose": cmd_diagnose,
}


def _report(code, kind, exc, command):
    print(json.dumps({"status": "error", "exit_code": code, "command": command, "error": kind,
                      "message": str(exc)}, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    command = args.command
    try:
        cfg = resolve_config(command, args)
        meta = metadata(command, cfg)
    except UsageError as exc:
        return _report(2, "UsageError", exc, command)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            HANDLERS[command](cfg, meta)
    except (UsageError, ConfigurationError, FileNotFoundError, KeyError) as exc:
        return _report(2, type(exc).__name__, exc, command)
    except (IngestError, FitError, RuntimeError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _report(1, type(exc).__name__, exc, command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
