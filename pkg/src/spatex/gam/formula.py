"""Declarative additive formulas for the three GEV parameters and their design matrices.

A formula is a mapping from parameter name (``mu``, ``log_sigma``, ``xi``) to
a term description::

    {"name": "M3",
     "mu": {"intercept": true, "linear": ["A"],
            "smooth": [{"covariate": "month", "kind": "cyclic_cubic"}],
            "random_slope": [{"covariate": "A", "group": "month"}]},
     "log_sigma": {"intercept": true},
     "xi": {"intercept": true}}

Smooth terms accept ``kind`` in ``cubic``, ``cyclic_cubic`` and ``tensor``
(the latter with ``covariates`` and per-margin ``knots``).  Month smooths
default to the 12-knot cyclic basis; other smooths get ``knots`` (default 10)
knots at covariate quantiles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg

from ..smoothers import ConfigurationError, SplineBasis, TensorBasis, basis_eval, month_basis, quantile_knots

PARAMS = ("mu", "log_sigma", "xi")
_TERM_KEYS = {"intercept", "linear", "smooth", "random_slope"}


@dataclass(frozen=True)
class SmoothSpec:
    covariates: tuple
    kind: str = "cubic"
    knots: tuple | None = None
    period: float | None = None

    @property
    def label(self):
        return f"s({','.join(self.covariates)})" if self.kind != "cyclic_cubic" else f"cc({self.covariates[0]})"


@dataclass(frozen=True)
class SlopeSpec:
    covariate: str
    group: str

    @property
    def label(self):
        return f"{self.covariate}|{self.group}"


@dataclass(frozen=True)
class ParamFormula:
    intercept: bool = True
    linear: tuple = ()
    smooth: tuple = ()
    random_slope: tuple = ()

    def covariates(self):
        out = list(self.linear)
        for s in self.smooth:
            out.extend(s.covariates)
        for r in self.random_slope:
            out.extend([r.covariate, r.group])
        return out


def _parse_param(spec) -> ParamFormula:
    if spec is None:
        return ParamFormula()
    unknown = set(spec) - _TERM_KEYS
    if unknown:
        raise ConfigurationError(f"unknown formula keys: {sorted(unknown)}")
    smooth = []
    for s in spec.get("smooth", []):
        if isinstance(s, str):
            s = {"covariate": s}
        covs = tuple(s["covariates"]) if "covariates" in s else (s["covariate"],)
        kind = s.get("kind", "tensor" if len(covs) > 1 else ("cyclic_cubic" if covs[0] == "month" else "cubic"))
        if kind not in ("cubic", "cyclic_cubic", "tensor"):
            raise ConfigurationError(f"unknown smooth kind {kind!r}")
        if kind == "tensor" and len(covs) < 2:
            raise ConfigurationError("tensor smooth needs at least two covariates")
        knots = s.get("knots")
        if knots is not None:
            knots = tuple(np.atleast_1d(knots).astype(int).tolist())
        smooth.append(SmoothSpec(covs, kind, knots, s.get("period")))
    slopes = []
    for r in spec.get("random_slope", []):
        slopes.append(SlopeSpec(r["covariate"], r.get("group", "month")))
    return ParamFormula(bool(spec.get("intercept", True)), tuple(spec.get("linear", [])), tuple(smooth),
                        tuple(slopes))


@dataclass(frozen=True)
class ModelFormula:
    """Additive structure for ``mu``, ``log sigma`` and ``xi``."""

    name: str
    mu: ParamFormula = field(default_factory=ParamFormula)
    log_sigma: ParamFormula = field(default_factory=ParamFormula)
    xi: ParamFormula = field(default_factory=ParamFormula)

    @classmethod
    def from_dict(cls, dct):
        unknown = set(dct) - set(PARAMS) - {"name"}
        if unknown:
            raise ConfigurationError(f"unknown formula entries: {sorted(unknown)}")
        return cls(str(dct.get("name", "model")), *(_parse_param(dct.get(p)) for p in PARAMS))

    @classmethod
    def from_json(cls, text_or_path):
        text = str(text_or_path)
        if not text.lstrip().startswith(("{", "[")):
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        data = json.loads(text)
        if isinstance(data, list):
            raise ConfigurationError("expected a single formula; use load_formulas for lists")
        return cls.from_dict(data)

    def param(self, name) -> ParamFormula:
        return getattr(self, name)

    def covariates(self):
        return sorted({c for p in PARAMS for c in self.param(p).covariates()})

    def to_dict(self):
        out = {"name": self.name}
        for p in PARAMS:
            f = self.param(p)
            out[p] = {
                "intercept": f.intercept,
                "linear": list(f.linear),
                "smooth": [{"covariates": list(s.covariates), "kind": s.kind,
                            **({"knots": list(s.knots)} if s.knots else {}),
                            **({"period": s.period} if s.period else {})} for s in f.smooth],
                "random_slope": [{"covariate": r.covariate, "group": r.group} for r in f.random_slope],
            }
        return out


def load_formulas(path_or_text):
    """Read one formula or a list of formulas from JSON."""
    text = str(path_or_text)
    if not text.lstrip().startswith(("{", "[")):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    data = json.loads(text)
    if isinstance(data, dict) and "models" in data:
        data = data["models"]
    if isinstance(data, dict):
        data = [data]
    return [ModelFormula.from_dict(d) for d in data]


@dataclass
class Block:
    """A column block of one parameter's design.

    ``Z`` maps the internal (identifiable) coefficients of the block to its
    ``n_cols`` reported coefficients: ``c_full = Z @ c_internal``.
    """

    label: str
    kind: str  # intercept | linear | smooth | random_slope
    n_cols: int
    Z: np.ndarray
    penalties: list  # penalty matrices on the internal coefficients
    builder: object = None  # basis or level list used for prediction
    covariates: tuple = ()

    @property
    def n_internal(self):
        return self.Z.shape[1]


@dataclass
class ParamDesign:
    name: str
    X: np.ndarray
    blocks: list

    @property
    def n_internal(self):
        return self.X.shape[1]

    @property
    def n_cols(self):
        return int(sum(b.n_cols for b in self.blocks))

    def slices(self):
        out, s = [], 0
        for b in self.blocks:
            out.append(slice(s, s + b.n_internal))
            s += b.n_internal
        return out

    def column_names(self):
        names = []
        for b in self.blocks:
            if b.n_cols == 1:
                names.append(b.label)
            else:
                names.extend(f"{b.label}[{i + 1}]" for i in range(b.n_cols))
        return names


@dataclass
class DesignMatrices:
    """One design per GEV parameter, stacked in ``PARAMS`` order.

    Penalties live on the blocks; ``penalty_list`` embeds them in the full
    internal coefficient vector.
    """

    formula: ModelFormula
    params: list
    ranges: dict

    def __getitem__(self, name) -> ParamDesign:
        return self.params[PARAMS.index(name)]

    @property
    def n_internal(self):
        return int(sum(p.n_internal for p in self.params))

    @property
    def n_cols(self):
        return int(sum(p.n_cols for p in self.params))

    def offsets(self):
        out, s = [], 0
        for p in self.params:
            out.append(s)
            s += p.n_internal
        return out

    def penalty_list(self):
        """``(label, full-size matrix)`` pairs on the stacked internal coefficient vector."""
        n = self.n_internal
        out = []
        for off, pd_ in zip(self.offsets(), self.params):
            for blk, sl in zip(pd_.blocks, pd_.slices()):
                for j, P in enumerate(blk.penalties):
                    M = np.zeros((n, n))
                    M[off + sl.start:off + sl.stop, off + sl.start:off + sl.stop] = P
                    out.append((f"{pd_.name}:{blk.label}" + (f"#{j}" if len(blk.penalties) > 1 else ""), M))
        return out

    def transform(self, table: pd.DataFrame) -> list:
        """Design matrices for new rows using the stored bases and constraints."""
        _check_covariates(self.formula, table)
        return [np.column_stack([_block_rows(b, table) @ b.Z for b in p.blocks]) if p.blocks else
                np.zeros((len(table), 0)) for p in self.params]


def _check_covariates(formula: ModelFormula, table: pd.DataFrame):
    missing = [c for c in formula.covariates() if c not in table.columns]
    if missing:
        raise ConfigurationError(f"covariate(s) missing from table: {', '.join(missing)}")


def _col(table, name):
    v = table[name].to_numpy(dtype=float)
    if not np.all(np.isfinite(v)):
        raise ConfigurationError(f"covariate {name} has missing or non-finite values")
    return v


def _block_rows(b: Block, table) -> np.ndarray:
    n = len(table)
    if b.kind == "intercept":
        return np.ones((n, 1))
    if b.kind == "linear":
        return _col(table, b.covariates[0])[:, None]
    if b.kind == "smooth":
        if isinstance(b.builder, TensorBasis):
            X = b.builder(np.column_stack([_col(table, c) for c in b.covariates]))
        else:
            X = basis_eval(b.builder, _col(table, b.covariates[0]))
        return X
    if b.kind == "random_slope":
        levels = b.builder
        g = table[b.covariates[1]].to_numpy()
        idx = pd.Index(levels).get_indexer(g)
        if np.any(idx < 0):
            bad = sorted(set(np.asarray(g)[idx < 0].tolist()))[:5]
            raise ConfigurationError(f"unknown level(s) {bad} of grouping factor {b.covariates[1]}")
        X = np.zeros((n, len(levels)))
        X[np.arange(n), idx] = _col(table, b.covariates[0])
        return X
    raise ConfigurationError(f"unknown block kind {b.kind}")


def _make_basis(spec: SmoothSpec, table):
    if spec.kind == "cyclic_cubic":
        cov = spec.covariates[0]
        if cov == "month" and spec.period in (None, 12, 12.0):
            return month_basis(spec.knots[0] if spec.knots else 12)
        period = spec.period
        if period is None:
            raise ConfigurationError(f"cyclic smooth over {cov} needs a period")
        k = spec.knots[0] if spec.knots else 10
        lo = float(np.min(_col(table, cov)))
        return SplineBasis("cyclic_cubic", lo + period * np.arange(k) / k, period=float(period))
    if spec.kind == "cubic":
        k = spec.knots[0] if spec.knots else 10
        return SplineBasis("cubic", quantile_knots(_col(table, spec.covariates[0]), k))
    ks = spec.knots or (5,) * len(spec.covariates)
    if len(ks) == 1:
        ks = ks * len(spec.covariates)
    return TensorBasis(tuple(SplineBasis("cubic", quantile_knots(_col(table, c), k))
                             for c, k in zip(spec.covariates, ks)))


def _scaled(P, X):
    # normalise so a unit smoothing parameter balances penalty and data scale
    nP = np.linalg.norm(P)
    if nP == 0:
        return P
    return P * (np.linalg.norm(X.T @ X) / len(X)) / nP


def build_design(formula: ModelFormula, table: pd.DataFrame) -> DesignMatrices:
    """Realise ``formula`` on ``table``.

    Smooth blocks carry a sum-to-zero constraint over the training rows when
    the parameter also has an intercept; the constraint is applied by
    reparameterising onto its null space, so the reported block still has
    one coefficient per basis function.  Random slopes get an identity
    (ridge) penalty.
    """
    _check_covariates(formula, table)
    designs = []
    ranges = {c: (float(np.min(_col(table, c))), float(np.max(_col(table, c))))
              for c in formula.covariates() if pd.api.types.is_numeric_dtype(table[c])}
    for pname in PARAMS:
        f = formula.param(pname)
        blocks = []
        if f.intercept:
            blocks.append(Block("(Intercept)", "intercept", 1, np.eye(1), []))
        for c in f.linear:
            blocks.append(Block(c, "linear", 1, np.eye(1), [], covariates=(c,)))
        has_const = f.intercept
        for s in f.smooth:
            basis = _make_basis(s, table)
            blk = Block(s.label, "smooth", basis.n_basis, np.eye(basis.n_basis), [], basis, s.covariates)
            X = _block_rows(blk, table)
            if has_const:
                Z = linalg.null_space(X.mean(axis=0, keepdims=True))
            else:
                Z = np.eye(X.shape[1])
                has_const = True
            pens = basis.penalties() if isinstance(basis, TensorBasis) else [basis.penalty()]
            XZ = X @ Z
            blk.Z = Z
            blk.penalties = [_scaled(Z.T @ P @ Z, XZ) for P in pens]
            blocks.append(blk)
        for r in f.random_slope:
            g = table[r.group]
            levels = list(range(1, 13)) if r.group == "month" else sorted(pd.unique(g).tolist())
            blk = Block(r.label, "random_slope", len(levels), np.eye(len(levels)), [], levels,
                        (r.covariate, r.group))
            X = _block_rows(blk, table)
            blk.penalties = [_scaled(np.eye(len(levels)), X)]
            blocks.append(blk)
        X = np.column_stack([_block_rows(b, table) @ b.Z for b in blocks]) if blocks else np.zeros((len(table), 0))
        if X.shape[1] == 0:
            raise ConfigurationError(f"parameter {pname} has no terms; add an intercept")
        designs.append(ParamDesign(pname, X, blocks))
    return DesignMatrices(formula, designs, ranges)


def _basis_to_dict(b):
    if isinstance(b, TensorBasis):
        return {"type": "tensor", "margins": [_basis_to_dict(m) for m in b.margins]}
    return {"type": "spline", "kind": b.kind, "knots": np.asarray(b.knots).tolist(), "period": b.period}


def _basis_from_dict(d):
    if d["type"] == "tensor":
        return TensorBasis(tuple(_basis_from_dict(m) for m in d["margins"]))
    return SplineBasis(d["kind"], np.asarray(d["knots"], dtype=float), d["period"])


def design_to_dict(design: DesignMatrices) -> dict:
    """Everything needed to rebuild the design for new rows (bases, constraints, levels, ranges)."""
    params = []
    for p in design.params:
        blocks = []
        for b in p.blocks:
            entry = {"label": b.label, "kind": b.kind, "n_cols": b.n_cols, "covariates": list(b.covariates),
                     "Z": b.Z.tolist()}
            if b.kind == "smooth":
                entry["basis"] = _basis_to_dict(b.builder)
            elif b.kind == "random_slope":
                entry["levels"] = list(b.builder)
            blocks.append(entry)
        params.append({"name": p.name, "blocks": blocks})
    return {"params": params, "ranges": {k: list(v) for k, v in design.ranges.items()}}


def design_from_dict(formula: ModelFormula, d: dict) -> DesignMatrices:
    """Inverse of :func:`design_to_dict`; the training design matrices are not restored."""
    params = []
    for p in d["params"]:
        blocks = []
        for e in p["blocks"]:
            builder = None
            if e["kind"] == "smooth":
                builder = _basis_from_dict(e["basis"])
            elif e["kind"] == "random_slope":
                builder = e["levels"]
            Z = np.asarray(e["Z"], dtype=float).reshape(e["n_cols"], -1)
            blocks.append(Block(e["label"], e["kind"], int(e["n_cols"]), Z, [], builder, tuple(e["covariates"])))
        n_int = int(sum(b.n_internal for b in blocks))
        params.append(ParamDesign(p["name"], np.zeros((0, n_int)), blocks))
    return DesignMatrices(formula, params, {k: tuple(v) for k, v in d["ranges"].items()})
