"""Penalised maximum-likelihood fitting and prediction of GEV additive models."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..evd import GevParams, gev_nll_terms
from .formula import DesignMatrices, ModelFormula, build_design, design_from_dict, design_to_dict

XI_BOUND = 0.5
RESPONSE = "maximum"


class ConvergenceError(RuntimeError):
    """Raised when the optimiser stops early; ``best`` holds the best fit reached."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


def xi_link(eta):
    """Bounded shape link ``xi = 0.5 tanh(2 eta)`` with unit slope at zero."""
    return XI_BOUND * np.tanh(eta / XI_BOUND)


def xi_link_inv(xi):
    return XI_BOUND * np.arctanh(np.asarray(xi) / XI_BOUND)


def _etas(design_X, coef, offsets):
    out = []
    for X, off in zip(design_X, offsets):
        out.append(X @ coef[off:off + X.shape[1]])
    return out


def _row_terms(y, e_mu, e_ls, e_xi):
    """Per-row nll and its derivatives with respect to the three linear predictors."""
    sigma = np.exp(e_ls)
    xi = xi_link(e_xi)
    nll, dmu, dsig, dxi = gev_nll_terms(y, e_mu, sigma, xi)
    return nll, dmu, dsig * sigma, dxi * (1.0 - (xi / XI_BOUND) ** 2)


class _Objective:
    def __init__(self, y, design_X, offsets, S):
        self.y = y
        self.X = design_X
        self.offsets = offsets
        self.S = S
        self.n = sum(X.shape[1] for X in design_X)

    def __call__(self, coef, want_grad=True):
        e = _etas(self.X, coef, self.offsets)
        # trial points of the line search may overflow; they come back as f = inf and are rejected
        with np.errstate(over="ignore", invalid="ignore"):
            nll, g0, g1, g2 = _row_terms(self.y, *e)
        pen = 0.5 * coef @ self.S @ coef
        f = float(np.sum(nll)) + pen
        if not np.isfinite(f):
            return np.inf, None
        if not want_grad:
            return f, None
        g = np.concatenate([X.T @ gr for X, gr in zip(self.X, (g0, g1, g2))]) + self.S @ coef
        return f, g

    def unpenalised(self, coef):
        e = _etas(self.X, coef, self.offsets)
        return float(np.sum(_row_terms(self.y, *e)[0]))

    def hessian(self, coef, include_penalty=True):
        """Observed information: per-row 3x3 finite-difference Hessians chained through the designs."""
        e = _etas(self.X, coef, self.offsets)
        h = 1e-5
        rows = []
        for j in range(3):
            ep = [a + (h if i == j else 0.0) for i, a in enumerate(e)]
            em = [a - (h if i == j else 0.0) for i, a in enumerate(e)]
            gp = _row_terms(self.y, *ep)[1:]
            gm = _row_terms(self.y, *em)[1:]
            rows.append([(gp[i] - gm[i]) / (2 * h) for i in range(3)])
        H = np.zeros((self.n, self.n))
        for a in range(3):
            for b in range(3):
                hab = 0.5 * (rows[a][b] + rows[b][a])
                Xa, Xb = self.X[a], self.X[b]
                oa, ob = self.offsets[a], self.offsets[b]
                H[oa:oa + Xa.shape[1], ob:ob + Xb.shape[1]] = Xa.T @ (hab[:, None] * Xb)
        if include_penalty:
            H = H + self.S
        return 0.5 * (H + H.T)


def _bfgs(obj, x0, maxiter=500, gtol=1e-5):
    """BFGS with Armijo backtracking; only steps that decrease the objective are accepted."""
    x = x0.copy()
    f, g = obj(x)
    if not np.isfinite(f):
        raise ConvergenceError("objective is not finite at the starting values")
    n = x.size
    Hinv = np.eye(n) / max(1.0, np.linalg.norm(g))
    it = 0
    for it in range(1, maxiter + 1):
        if np.linalg.norm(g) < gtol * (1.0 + abs(f)):
            return x, f, g, it, True
        p = -Hinv @ g
        slope = g @ p
        if slope >= 0:
            Hinv = np.eye(n) / max(1.0, np.linalg.norm(g))
            p = -Hinv @ g
            slope = g @ p
        t = 1.0
        while True:
            xn = x + t * p
            fn, gn = obj(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-20:
                return x, f, g, it, False
        s = xn - x
        yv = gn - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho_ = 1.0 / sy
            V = np.eye(n) - rho_ * np.outer(s, yv)
            Hinv = V @ Hinv @ V.T + rho_ * np.outer(s, s)
        x, f, g = xn, fn, gn
    return x, f, g, it, False


def _newton_polish(obj, x, f, g, max_steps=50):
    for _ in range(max_steps):
        H = obj.hessian(x)
        if not np.all(np.isfinite(H)):
            break
        try:
            np.linalg.cholesky(H)  # positive-definiteness check only
        except np.linalg.LinAlgError:
            w = np.linalg.eigvalsh(H)
            H = H + (abs(w.min()) + 1e-6 * max(1.0, abs(w.max()))) * np.eye(x.size)
        p = -np.linalg.solve(H, g)
        t = 1.0
        improved = False
        while t > 1e-10:
            fn, gn = obj(x + t * p)
            if np.isfinite(fn) and fn <= f + 1e-12 * abs(f):
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        x, f_old, f, g = x + t * p, f, fn, gn
        if np.max(np.abs(g)) < 1e-9 * (1.0 + abs(f)) or abs(f_old - f) < 1e-14 * (1.0 + abs(f)):
            break
    return x, f, g


def _start(y, design: DesignMatrices):
    s = np.std(y)
    sigma = max(s * np.sqrt(6.0) / np.pi, 1e-6)
    mu = np.mean(y) - np.euler_gamma * sigma
    coef = np.zeros(design.n_internal)
    for val, off, pd_ in zip((mu, np.log(sigma), xi_link_inv(0.1)), design.offsets(), design.params):
        if pd_.blocks and pd_.blocks[0].kind == "intercept":
            coef[off] = val
    return coef


def _smoothing_vector(design: DesignMatrices, smoothing):
    labels = [lab for lab, _ in design.penalty_list()]
    if smoothing is None:
        smoothing = 1.0
    if np.isscalar(smoothing):
        lam = {lab: float(smoothing) for lab in labels}
    else:
        lam = {lab: 1.0 for lab in labels}
        unknown = set(smoothing) - set(labels)
        if unknown:
            raise ValueError(f"smoothing given for unknown penalties: {sorted(unknown)}")
        lam.update({k: float(v) for k, v in smoothing.items()})
    if any(v < 0 for v in lam.values()):
        raise ValueError("smoothing parameters must be non-negative")
    return lam


@dataclass
class MarginalFit:
    design: DesignMatrices
    coef: np.ndarray
    smoothing: dict
    pnll: float
    nll: float
    information: np.ndarray
    cov: np.ndarray
    grad_norm: float
    n_iter: int
    converged: bool
    n_obs: int

    @property
    def formula(self) -> ModelFormula:
        return self.design.formula

    def linear_predictors(self, table=None):
        Xs = [p.X for p in self.design.params] if table is None else self.design.transform(table)
        return _etas(Xs, self.coef, self.design.offsets())

    def predict(self, table: pd.DataFrame, warn_extrapolation: bool = True) -> GevParams:
        """Per-row GEV parameters for the rows of ``table``."""
        if warn_extrapolation:
            out = [c for c, (lo, hi) in self.design.ranges.items()
                   if c in table and (table[c].min() < lo - 1e-9 or table[c].max() > hi + 1e-9)]
            if out:
                warnings.warn(f"prediction extrapolates covariate(s) {out}", RuntimeWarning, stacklevel=2)
        e_mu, e_ls, e_xi = self.linear_predictors(table)
        return GevParams(e_mu, np.exp(e_ls), xi_link(e_xi))

    def coefficients(self) -> dict:
        """Reported coefficients per parameter and block (full basis size) with standard errors."""
        out = {}
        for off, pd_ in zip(self.design.offsets(), self.design.params):
            blocks = {}
            for blk, sl in zip(pd_.blocks, pd_.slices()):
                idx = np.arange(off + sl.start, off + sl.stop)
                c = blk.Z @ self.coef[idx]
                cov = blk.Z @ self.cov[np.ix_(idx, idx)] @ blk.Z.T
                blocks[blk.label] = {"kind": blk.kind, "coef": c, "se": np.sqrt(np.clip(np.diag(cov), 0, None))}
            out[pd_.name] = blocks
        return out

    def coef_of(self, param: str, label: str):
        b = self.coefficients()[param][label]
        return (float(b["coef"][0]), float(b["se"][0])) if b["coef"].size == 1 else (b["coef"], b["se"])

    def to_dict(self):
        coefs = self.coefficients()
        return {
            "formula": self.formula.to_dict(),
            "smoothing": self.smoothing,
            "pnll": float(self.pnll),
            "nll": float(self.nll),
            "grad_norm": float(self.grad_norm),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "n_obs": int(self.n_obs),
            "coefficients": {p: {lab: {"kind": b["kind"], "coef": b["coef"].tolist(), "se": b["se"].tolist()}
                                 for lab, b in blocks.items()} for p, blocks in coefs.items()},
            "internal": {"coef": self.coef.tolist(), "information": self.information.tolist(),
                         "design": design_to_dict(self.design)},
        }

    @classmethod
    def from_dict(cls, d) -> "MarginalFit":
        """Rebuild a fit (for prediction and reporting) from :meth:`to_dict` output."""
        formula = ModelFormula.from_dict(d["formula"])
        design = design_from_dict(formula, d["internal"]["design"])
        info = np.asarray(d["internal"]["information"], dtype=float)
        cov = np.linalg.inv(info)
        return cls(design, np.asarray(d["internal"]["coef"], dtype=float), dict(d["smoothing"]), d["pnll"], d["nll"],
                   info, 0.5 * (cov + cov.T), d["grad_norm"], d["n_iter"], d["converged"], d["n_obs"])

    @classmethod
    def from_json(cls, path) -> "MarginalFit":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data.get("fit", data))

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text + "\n")
        return text


def fit(design: DesignMatrices | ModelFormula, table: pd.DataFrame, smoothing=None, response: str = RESPONSE,
        maxiter: int = 500) -> MarginalFit:
    """Penalised GEV maximum likelihood.

    Minimises ``sum nll + 1/2 sum_k lambda_k c' P_k c`` by BFGS with a
    backtracking line search from a moment-based start, followed by Newton
    steps on the observed information.  ``smoothing`` is a common multiplier
    or a mapping from penalty label to ``lambda``.
    """
    if isinstance(design, ModelFormula):
        design = build_design(design, table)
    y = table[response].to_numpy(dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains missing or non-finite values")
    if len(y) < 10 * design.n_internal:
        warnings.warn(f"only {len(y)} rows for {design.n_internal} coefficients", RuntimeWarning, stacklevel=2)
    lam = _smoothing_vector(design, smoothing)
    n = design.n_internal
    S = np.zeros((n, n))
    for lab, M in design.penalty_list():
        S += lam[lab] * M
    obj = _Objective(y, [p.X for p in design.params], design.offsets(), S)
    x0 = _start(y, design)
    f0, _ = obj(x0, want_grad=False)
    if not np.isfinite(f0):
        x0[design.offsets()[2]] = 0.0
    x, f, g, it, ok = _bfgs(obj, x0, maxiter=maxiter)
    x, f, g = _newton_polish(obj, x, f, g)
    gnorm = float(np.linalg.norm(g))
    converged = bool(gnorm < 1e-5 * (1.0 + abs(f)))
    info = obj.hessian(x)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    result = MarginalFit(design, x, lam, f, obj.unpenalised(x), info, 0.5 * (cov + cov.T), gnorm, it, converged,
                         len(y))
    if not converged:
        raise ConvergenceError(f"no convergence after {it} iterations (gradient norm {gnorm:.3g})", result)
    return result
