"""Acceptance suite: one test per criterion, each recording a PASS/FAIL summary line.

The summary lines are printed at the end of the pytest run (see ``conftest.py``).
Every oracle here is independent of the code under test: scipy distributions and
quadrature, Monte Carlo, brute-force finite differences, or hand-built fixtures.
"""

import json
import shutil
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy import integrate, optimize, stats

from spatex.cli import main as cli_main
from spatex.cli import read_csv
from spatex.empirical import chi_q
from spatex.evd import GevParams, crps_gev, gev_cdf, gev_logpdf, gev_nll_grad, gev_quantile
from spatex.gam import ModelFormula, cv_score, fit as fit_gam, make_folds
from spatex.ingest import block_maxima, parse_hourly, screen_stations, station_summary
from spatex.maxid import (MaxIdParams, PairData, PairSet, copula_cdf, exponent_V, fit as fit_maxid, kappa_bar,
                          model_chi, pair_loglik)
from spatex.simulate import SiteLayout, monthly_calendar, seasonal_T, sim_maxid, synthetic_maxima, uniform_table

FIXTURES = Path(__file__).parent / "fixtures" / "ingest"

M0 = ModelFormula.from_dict({"name": "M0"})
M3 = ModelFormula.from_dict({"name": "M3", "mu": {"linear": ["A"], "smooth": [{"covariate": "month"}]}})


# ----------------------------------------------------------------------------- 1


def test_criterion_01_gev_analytics(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_rt = 0.0
    for _ in range(200):
        p = GevParams(rng.uniform(-20, 20), rng.uniform(0.1, 10), rng.choice([rng.uniform(-0.45, 0.45), 0.0, 1e-9]))
        u = rng.uniform(1e-6, 1 - 1e-6, 20)
        worst_rt = max(worst_rt, float(np.max(np.abs(gev_cdf(gev_quantile(u, p), p) - u) / u)))
    worst_g = 0.0
    for xi in (-0.3, -1e-9, 0.0, 0.15, 0.4):
        p = GevParams(1.0, 2.0, xi)
        x = gev_quantile(rng.uniform(0.01, 0.99, 300), p)
        th = np.array([1.1, 1.9, xi + 0.02])
        _, g = gev_nll_grad(GevParams(*th), x)
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1e-6
            fd = (gev_nll_grad(GevParams(*(th + e)), x)[0] - gev_nll_grad(GevParams(*(th - e)), x)[0]) / 2e-6
            worst_g = max(worst_g, abs(g[j] - fd) / max(abs(fd), 1e-8))
    worst_int = 0.0
    for xi in (-0.4, -0.1, 0.0, 0.2, 0.45):
        p = GevParams(0.5, 1.5, xi)
        lo = -np.inf if xi <= 0 else 0.5 - 1.5 / xi
        hi = np.inf if xi >= 0 else 0.5 - 1.5 / xi
        val = integrate.quad(lambda t: np.exp(gev_logpdf(t, p)), lo, hi, epsabs=1e-13, limit=400)[0]
        worst_int = max(worst_int, abs(val - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_rt <= 1e-10 and worst_g <= 1e-4 and worst_int <= 1e-6 and elapsed < 1.0
    criterion(1, ok, f"round-trip {worst_rt:.1e}, gradient rel {worst_g:.1e}, integral {worst_int:.1e}, "
                     f"{elapsed:.2f} s")
    assert ok


# ----------------------------------------------------------------------------- 2


def _crps_oracle(y, p):
    """Quadrature of int (F(t) - 1{t >= y})^2 dt with scipy's GEV cdf (shape c = -xi)."""
    F = lambda t: stats.genextreme.cdf(t, -p.xi, loc=p.mu, scale=p.sigma)
    lo = -np.inf if p.xi <= 0 else p.mu - p.sigma / p.xi
    hi = np.inf if p.xi >= 0 else p.mu - p.sigma / p.xi
    qs = [stats.genextreme.ppf(q, -p.xi, loc=p.mu, scale=p.sigma) for q in (1e-4, 0.1, 0.5, 0.9, 0.9999)]
    pts = sorted({float(y), *[float(q) for q in qs]})
    below = [t for t in pts if t <= y]
    above = [t for t in pts if t >= y]
    total = 0.0
    edges = [max(lo, -np.inf)] + below
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            total += integrate.quad(lambda t: F(t) ** 2, a, b, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
    edges = above + [hi]
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            total += integrate.quad(lambda t: (1.0 - F(t)) ** 2, a, b, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
    return total


def test_criterion_02_crps_closed_form(criterion):
    rng = np.random.default_rng(202)
    cases = []
    for _ in range(50):
        p = GevParams(rng.uniform(-10, 10), rng.uniform(0.2, 5), rng.uniform(-0.45, 0.45))
        y = float(gev_quantile(rng.uniform(0.001, 0.999), p)) + rng.normal(0, p.sigma)
        if p.xi < 0:
            y = min(y, p.mu - p.sigma / p.xi + 1.0)
        cases.append((y, p))
    t0 = time.perf_counter()
    closed = [float(crps_gev(y, p)) for y, p in cases]
    elapsed = time.perf_counter() - t0
    oracle = [_crps_oracle(y, p) for y, p in cases]
    err = max(abs(a - b) / max(1.0, abs(b)) for a, b in zip(closed, oracle))
    ok = err <= 1e-6 and elapsed < 5.0
    criterion(2, ok, f"max deviation {err:.1e} over 50 cases, closed form {elapsed:.3f} s")
    assert ok


# ----------------------------------------------------------------------------- 3


def _direct_mle(x):
    """Three-parameter GEV MLE with scipy's density, polished by Nelder-Mead on a tight tolerance."""
    nll = lambda th: -np.sum(stats.genextreme.logpdf(x, -th[2], loc=th[0], scale=th[1])) if th[1] > 0 else np.inf
    c, loc, scale = stats.genextreme.fit(x)
    th = np.array([loc, scale, -c])
    for _ in range(3):
        th = optimize.minimize(nll, th, method="Nelder-Mead",
                               options={"xatol": 1e-11, "fatol": 1e-12, "maxiter": 20000}).x
    return th, nll(th)


def test_criterion_03_marginal_recovery(criterion):
    t0 = time.perf_counter()
    hits = 0
    n_seeds = 200
    for seed in range(n_seeds):
        tab = synthetic_maxima(n_sites=49, n_years=33, seed=seed)
        assert len(tab) == 49 * 396
        slope, se = fit_gam(M3, tab).coef_of("mu", "A")
        hits += abs(slope - 2.0) <= 3.0 * se
    tab = synthetic_maxima(n_sites=49, n_years=33, seed=9999)
    f0 = fit_gam(M0, tab)
    th, nll = _direct_mle(tab.maximum.to_numpy())
    p = f0.predict(tab.iloc[:1])
    par_err = float(np.max(np.abs(np.array([p.mu[0], p.sigma[0], p.xi[0]]) - th)))
    nll_err = abs(f0.nll - nll) / abs(nll)
    elapsed = time.perf_counter() - t0
    ok = hits >= 0.95 * n_seeds and nll_err <= 1e-6 and par_err <= 1e-6 * max(1.0, np.abs(th).max()) * 10 \
        and elapsed < 600
    criterion(3, ok, f"slope within 3 SE in {hits}/{n_seeds} seeds; intercept-only vs direct MLE: "
                     f"nll rel {nll_err:.1e}, max parameter diff {par_err:.1e}; {elapsed:.0f} s")
    assert ok


# ----------------------------------------------------------------------------- 4


def test_criterion_04_cv_machinery(criterion):
    tab = synthetic_maxima(n_sites=16, n_years=8, seed=0)
    folds = make_folds(tab, seed=0)
    counts = np.vstack([folds.held_out(k) for k in range(1, 13)]).sum(axis=0)
    partition = folds.n_folds == 12 and bool(np.all(counts == 1))
    c1 = set(tab.month[folds.temporal == 1]) == {1, 4, 7, 10}
    wins = 0
    n_seeds = 50
    for seed in range(n_seeds):
        tab = synthetic_maxima(n_sites=16, n_years=8, seed=seed)
        folds = make_folds(tab, seed=seed)
        r0 = cv_score(M0, tab, folds)
        r3 = cv_score(M3, tab, folds)
        wins += r3.nll < r0.nll and r3.crps < r0.crps
    ok = partition and c1 and wins >= 0.95 * n_seeds
    criterion(4, ok, f"12-fold partition {partition}, cluster 1 = Jan/Apr/Jul/Oct {c1}, "
                     f"true structure wins on nLL and CRPS in {wins}/{n_seeds} seeds")
    assert ok


# ----------------------------------------------------------------------------- 5


def test_criterion_05_kernel_against_monte_carlo(criterion):
    t0 = time.perf_counter()
    anchors = all(kappa_bar(1.0, b) == 1.0 for b in (0.0, 0.25, 1.0, 4.0))
    anchor2 = abs(kappa_bar(2.0, 1.0) - 0.5 * np.exp(-1.0)) <= 1e-12
    rng = np.random.default_rng(505)
    n = 1_000_000
    worst = 0.0
    for _ in range(20):
        z1, z2 = rng.uniform(0.3, 3.0, 2)
        r = rng.uniform(0.0, 0.95)
        beta = rng.choice([0.0, rng.uniform(0.05, 2.0)])
        e1 = rng.standard_normal(n)
        e2 = r * e1 + np.sqrt(1 - r * r) * rng.standard_normal(n)
        with np.errstate(divide="ignore"):
            m = np.minimum(np.where(e1 > 0, z1 / e1, np.inf), np.where(e2 > 0, z2 / e2, np.inf))
        vals = np.zeros(n)
        fin = np.isfinite(m)
        vals[fin] = kappa_bar(m[fin], beta)
        mc, se = vals.mean(), vals.std(ddof=1) / np.sqrt(n)
        V = float(np.asarray(exponent_V(z1, z2, r, beta)[0]))
        worst = max(worst, abs(V - mc) / se)
    elapsed = time.perf_counter() - t0
    ok = anchors and anchor2 and worst <= 3.0 and elapsed < 120
    criterion(5, ok, f"anchors {anchors and anchor2}; worst |V - MC| = {worst:.2f} MC SE over 20 configurations; "
                     f"{elapsed:.0f} s")
    assert ok


# ----------------------------------------------------------------------------- 6


def test_criterion_06_copula_validity(criterion):
    configs = [(MaxIdParams.from_natural(0.5, 30.0), 15.0), (MaxIdParams.from_natural(1.5, 10.0), 25.0),
               (MaxIdParams.from_natural(0.05, 50.0), 5.0)]
    u = np.linspace(0.02, 0.98, 25)
    margin_err = 0.0
    min_vol = np.inf
    grid = np.linspace(0.0, 1.0, 21)
    for p, d in configs:
        margin_err = max(margin_err, float(np.max(np.abs(copula_cdf(u, np.ones_like(u), d, 0.0, p) - u))),
                         float(np.max(np.abs(copula_cdf(np.ones_like(u), u, d, 0.0, p) - u))))
        G1, G2 = np.meshgrid(grid, grid, indexing="ij")
        C = copula_cdf(G1.ravel(), G2.ravel(), d, 0.0, p).reshape(G1.shape)
        vol = C[1:, 1:] - C[:-1, 1:] - C[1:, :-1] + C[:-1, :-1]
        min_vol = min(min_vol, float(vol.min()))
    rng = np.random.default_rng(606)
    worst = 0.0
    h = 1e-4
    for i in range(20):
        p, d = configs[i % 3]
        u1, u2 = rng.uniform(0.05, 0.95, 2)
        C = lambda a, b: float(copula_cdf(np.array([a]), np.array([b]), d, 0.0, p)[0])
        fd = (C(u1 + h, u2 + h) - C(u1 + h, u2 - h) - C(u1 - h, u2 + h) + C(u1 - h, u2 - h)) / (4 * h * h)
        dens = float(np.exp(pair_loglik(np.array([u1]), np.array([u2]), d, 0.0, p)[0]))
        worst = max(worst, abs(dens - fd) / fd)
    ok = margin_err <= 1e-6 and min_vol >= -1e-12 and worst <= 1e-3
    criterion(6, ok, f"margin error {margin_err:.1e}, smallest 20x20 rectangle mass {min_vol:.1e}, "
                     f"density vs finite-difference rel {worst:.1e}")
    assert ok


# ----------------------------------------------------------------------------- 7


def test_criterion_07_dependence_recovery(criterion):
    truth = MaxIdParams.from_natural(0.5, 30.0)
    t0 = time.perf_counter()
    hits = 0
    n_seeds = 20
    est = []
    for seed in range(n_seeds):
        lay = SiteLayout.uniform(25, 100.0, seed=1000 + seed)
        months, years = monthly_calendar(200)
        U = sim_maxid(lay, truth, 0.0, 200, seed)
        pdata = PairData(uniform_table(U, lay.site_ids, months, years),
                         PairSet.all_pairs(lay.site_ids, lay.distances), np.zeros(12))
        res = fit_maxid(pdata, compute_clic=False)
        b, lam = float(res.params.beta(0.0)), float(res.params.lam(0.0))
        est.append((b, lam))
        hits += abs(b - 0.5) <= 0.15 and abs(lam / 30.0 - 1.0) <= 0.3
    elapsed = time.perf_counter() - t0
    b_all = np.array(est)
    ok = hits >= 0.9 * n_seeds and elapsed < 1800
    criterion(7, ok, f"beta within 0.15 and lambda within 30% in {hits}/{n_seeds} seeds "
                     f"(beta range {b_all[:, 0].min():.2f}-{b_all[:, 0].max():.2f}, "
                     f"lambda range {b_all[:, 1].min():.1f}-{b_all[:, 1].max():.1f}); {elapsed:.0f} s")
    assert ok


# ----------------------------------------------------------------------------- 8


def test_criterion_08_seasonal_ordering(criterion):
    truth = MaxIdParams(np.log(0.5), -0.5, np.log(30.0), 0.4)
    T12 = seasonal_T(np.arange(1, 13))
    lay = SiteLayout.uniform(16, 100.0, seed=11)
    pairs = PairSet.all_pairs(lay.site_ids, lay.distances)
    n_seeds = 20
    # a seed succeeds when the seasonal CLIC is strictly lower and both fitted slopes have the true sign
    lower = signs = both = 0
    wrong = []
    for seed in range(n_seeds):
        months, years = monthly_calendar(240)
        U = sim_maxid(lay, truth, T12[months - 1], 240, seed)
        pdata = PairData(uniform_table(U, lay.site_ids, months, years), pairs, T12)
        stat = fit_maxid(pdata, seasonal=False)
        seas = fit_maxid(pdata, seasonal=True)
        a1b, a1l = seas.params.alpha1_beta, seas.params.alpha1_lambda
        is_lower = seas.clic < stat.clic
        sign_ok = a1b < 0 and a1l > 0
        lower += is_lower
        signs += sign_ok
        both += is_lower and sign_ok
        if not sign_ok:
            wrong.append(f"seed {seed}: a1_beta {a1b:+.3f}, a1_lambda {a1l:+.3f}")
    ok = both >= 0.9 * n_seeds
    criterion(8, ok, f"seasonal CLIC lower and slope signs correct in {both}/{n_seeds} seeds "
                     f"(CLIC lower {lower}/{n_seeds}, signs correct {signs}/{n_seeds}"
                     + (f"; {'; '.join(wrong)}" if wrong else "") + ")")
    assert ok


# ----------------------------------------------------------------------------- 9


def test_criterion_09_chi_consistency(criterion):
    p = MaxIdParams.from_natural(0.5, 30.0)
    lam = 30.0
    # sites on a line at 0, 15, 30 and 60 km give pairs at 0.5, 1 and 2 lambda
    lay = SiteLayout(np.array([[0.0, 0.0], [15.0, 0.0], [30.0, 0.0], [60.0, 0.0]]))
    U = sim_maxid(lay, p, 0.0, 20_000, seed=909)
    D = lay.distances
    worst = 0.0
    parts = []
    for frac in (0.5, 1.0, 2.0):
        d = frac * lam
        idx = [(i, j) for i in range(4) for j in range(i + 1, 4) if abs(D[i, j] - d) < 1e-9]
        emp = np.mean([chi_q(U[:, i], U[:, j], 0.98) for i, j in idx])
        mod = float(model_chi(d, 0.0, p, q=0.98))
        worst = max(worst, abs(emp - mod))
        parts.append(f"{frac:g}λ: {emp:.3f} vs {mod:.3f}")
    rng = np.random.default_rng(910)
    x, y = rng.uniform(size=(2, 100_000))
    ind = max(abs(chi_q(x, y, q) - (1 - q)) for q in (0.9, 0.95, 0.98))
    ok = worst <= 0.03 and ind <= 0.01
    criterion(9, ok, "; ".join(parts) + f"; independence error {ind:.4f}")
    assert ok


# ----------------------------------------------------------------------------- 10


def test_criterion_10_ingestion_rules(criterion, tmp_path):
    raw = pd.read_csv(FIXTURES / "hourly.csv", dtype=str, keep_default_na=False)
    parsed = parse_hourly(raw)
    errs = list(zip(parsed.errors.site_id, parsed.errors.reason))
    errors_ok = errs == [("COV", "malformed timestamp"), ("FAR", "malformed precipitation value")]

    st = pd.read_csv(FIXTURES / "stations.csv").rename(columns={"lon": "longitude", "lat": "latitude"})
    st = st.merge(station_summary(parsed.records), on="site_id")
    modelled, test, excluded = screen_stations(st)
    screen_ok = (modelled.site_id.tolist() == ["BND", "COV", "FAR", "M15", "TW1"]
                 and test.site_id.tolist() == ["TW2"] and excluded.site_id.tolist() == ["MIS"])

    st65 = pd.read_csv(FIXTURES / "stations_65.csv")
    m65, t65, x65 = screen_stations(st65)
    layout_ok = (len(m65), len(t65), len(x65)) == (49, 12, 4) and set(t65.site_id) == {f"T{i:02d}" for i in
                                                                                      range(1, 13)}

    bm = block_maxima(parsed.records[parsed.records.site_id.isin(modelled.site_id)])
    got = list(zip(bm.site_id, bm.year, bm.month, bm.maximum, bm.days_observed))
    expected = [("BND", 2001, 6, 12.5, 30), ("COV", 2001, 6, 4.0, 24), ("COV", 2001, 8, 6.0, 25),
                ("FAR", 2001, 6, 42.0, 30), ("M15", 2001, 6, 1.1, 26), ("TW1", 2001, 6, 2.0, 30),
                ("TW1", 2001, 7, 2.5, 31), ("TW1", 2001, 8, 3.0, 31)]
    bm_ok = got == expected

    # the same through the command line
    assert cli_main(["ingest", "--hourly", str(FIXTURES / "hourly.csv"), "--stations",
                     str(FIXTURES / "stations.csv"), "--outdir", str(tmp_path)]) == 0
    assert cli_main(["blockmax", "--hourly", str(tmp_path / "hourly_clean.csv"), "--stations",
                     str(tmp_path / "stations_screened.csv"), "--out", str(tmp_path / "mx.csv")]) == 0
    mx = read_csv(tmp_path / "mx.csv")
    cli_ok = list(zip(mx.site_id, mx.year, mx.month, mx.maximum, mx.days_observed)) == expected
    ok = errors_ok and screen_ok and layout_ok and bm_ok and cli_ok
    criterion(10, ok, f"row errors {errors_ok}, 09:00 boundary and 80% coverage {bm_ok}, 20% exclusion and "
                      f"5 km screening {screen_ok}, 65 -> 49 layout {layout_ok}, CLI {cli_ok}")
    assert ok


# ----------------------------------------------------------------------------- 11


def _covariate_inputs(d: Path, stations: pd.DataFrame):
    years = np.arange(1981, 2006)
    grid = [(lon, lat, m, y, 10 + lon + 2 * np.sin(m) + 0.1 * ((y * 7 + m * 3) % 5))
            for lon in (11.0, 12.0, 13.0) for lat in (45.0, 46.0) for y in years for m in range(1, 13)]
    pd.DataFrame(grid, columns=["lon", "lat", "month", "year", "maximum"]).to_csv(d / "grid.csv", index=False)
    yy = np.arange(1980, 2030)
    pd.DataFrame({"year": np.repeat(yy, 12), "month": np.tile(np.arange(1, 13), yy.size),
                  "anomaly_C": 0.02 * (np.repeat(yy, 12) - 1980)}).to_csv(d / "anomaly.csv", index=False)
    dates = pd.date_range("2000-01-01", "2000-12-31", freq="D")
    pd.DataFrame({"site_id": "S001", "date": dates.strftime("%Y-%m-%d"),
                  "tmax_C": 14 - 9 * np.cos(2 * np.pi * dates.dayofyear / 366)}).to_csv(d / "temp.csv", index=False)
    pd.DataFrame({"lon": [10.5, 14.0], "lat": [44.5, 44.9]}).to_csv(d / "coast.csv", index=False)


def _run_pipeline(d: Path, workers: int):
    d.mkdir()
    F = FIXTURES
    (d / "formulas.json").write_text(json.dumps([M0.to_dict(), M3.to_dict()]))
    w = str(workers)
    steps = [
        ["ingest", "--hourly", F / "hourly.csv", "--stations", F / "stations.csv", "--outdir", d / "ing"],
        ["blockmax", "--hourly", d / "ing" / "hourly_clean.csv", "--stations", d / "ing" / "stations_screened.csv",
         "--out", d / "bm.csv"],
        ["simulate", "--n-sites", 10, "--n-years", 8, "--seed", 7, "--alpha1-beta", -0.5, "--alpha1-lambda", 0.4,
         "--out", d / "sim.csv", "--stations-out", d / "st.csv", "--workers", w],
    ]
    for s in steps:
        assert cli_main([str(a) for a in s]) == 0, s
    sim = read_csv(d / "sim.csv")
    _covariate_inputs(d, sim)
    steps = [
        ["covariates", "--maxima", d / "sim.csv", "--stations", d / "st.csv", "--anomaly", d / "anomaly.csv",
         "--grid", d / "grid.csv", "--temperature", d / "temp.csv", "--coast", d / "coast.csv",
         "--out", d / "cov.csv"],
        ["fit-marginal", "--maxima", d / "sim.csv", "--formula", d / "formulas.json", "--model", "M3",
         "--out", d / "fit.json", "--coef-out", d / "coef.csv"],
        ["cv", "--maxima", d / "sim.csv", "--formulas", d / "formulas.json", "--out", d / "cv.csv",
         "--folds-out", d / "folds.csv", "--workers", w],
        ["select", "--maxima", d / "sim.csv", "--formulas", d / "formulas.json", "--smoothing-grid", 0.1, 10,
         "--out", d / "sel.csv", "--workers", w],
        ["transform-uniform", "--maxima", d / "sim.csv", "--fit", d / "fit.json", "--out", d / "u.csv"],
        ["fit-dependence", "--uniform", d / "u.csv", "--seasonal", "--out", d / "dep.json",
         "--pairs-out", d / "pairs.csv", "--workers", w],
        ["chi", "--data", d / "u.csv", "--q", 0.9, "--season", "winter", "summer", "--n-bins", 5,
         "--dependence", d / "dep.json", "--out", d / "chi.csv"],
        ["return-levels", "--maxima", d / "sim.csv", "--fit", d / "fit.json", "--reference-year", 1988,
         "--out", d / "rl.csv"],
        ["diagnose", "--maxima", d / "sim.csv", "--fit", d / "fit.json", "--dependence", d / "dep.json",
         "--q", 0.9, "--n-bins", 5, "--out", d / "diag.csv", "--chi-out", d / "dchi.csv"],
    ]
    for s in steps:
        assert cli_main([str(a) for a in s]) == 0, s
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_criterion_11_determinism(criterion, tmp_path):
    # every run uses the same directory so the echoed input paths in the headers agree
    runs = []
    for workers in (1, 1, 3):
        runs.append(_run_pipeline(tmp_path / "run", workers))
        shutil.rmtree(tmp_path / "run")
    a, b, c = runs
    differ_rerun = sorted(k for k in a if a[k] != b.get(k))
    differ_workers = sorted(k for k in a if a[k] != c.get(k))
    ok = set(a) == set(b) == set(c) and not differ_rerun and not differ_workers
    criterion(11, ok, f"{len(a)} output files from 12 subcommands; differing on rerun: {differ_rerun or 'none'}; "
                      f"differing across worker counts: {differ_workers or 'none'}")
    assert ok
