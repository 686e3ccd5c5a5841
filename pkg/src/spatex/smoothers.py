"""Penalised cubic regression splines and LOESS.

The cubic bases are "cardinal": the coefficient attached to basis function j
is the value of the smooth at knot j, as in the cubic regression spline
construction popularised by the mgcv package.  The natural variant is linear beyond
the boundary knots; the cyclic variant is periodic with the interval between
the last knot and ``first knot + period`` closing the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Invalid basis or smoother configuration."""


def _tridiag_system(h, cyclic):
    # B (second-derivative coupling) and D (value differences) for cubic splines
    k = len(h) if cyclic else len(h) + 1
    if cyclic:
        B = np.zeros((k, k))
        D = np.zeros((k, k))
        for j in range(k):
            jm = (j - 1) % k
            jp = (j + 1) % k
            B[j, j] += (h[jm] + h[j]) / 3.0
            B[j, jp] += h[j] / 6.0
            B[j, jm] += h[jm] / 6.0
            D[j, jp] += 1.0 / h[j]
            D[j, j] -= 1.0 / h[j] + 1.0 / h[jm]
            D[j, jm] += 1.0 / h[jm]
        return B, D
    m = k - 2
    B = np.zeros((m, m))
    D = np.zeros((m, k))
    for i in range(m):
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < m:
            B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
    return B, D


@dataclass(frozen=True)
class SplineBasis:
    """Cubic regression spline basis.

    ``kind`` is ``"cubic"`` or ``"cyclic_cubic"``; for the cyclic kind
    ``period`` must be given and knots must span less than one period.
    Tensor products are built with :class:`TensorBasis`.
    """

    kind: str
    knots: np.ndarray
    period: float | None = None
    _F: np.ndarray = field(init=False, repr=False, compare=False)
    _S: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if knots.size == 0:
            raise ConfigurationError("spline basis needs knots")
        if np.any(np.diff(knots) <= 0):
            raise ConfigurationError("knots must be strictly increasing")
        if self.kind == "cubic":
            if knots.size < 3:
                raise ConfigurationError("cubic spline needs at least 3 knots")
            h = np.diff(knots)
            B, D = _tridiag_system(h, cyclic=False)
            Fm = np.linalg.solve(B, D)
            F = np.vstack([np.zeros(knots.size), Fm, np.zeros(knots.size)])
            S = D.T @ Fm
        elif self.kind == "cyclic_cubic":
            if self.period is None or self.period <= knots[-1] - knots[0]:
                raise ConfigurationError("cyclic spline needs a period exceeding the knot span")
            if knots.size < 3:
                raise ConfigurationError("cyclic spline needs at least 3 knots")
            h = np.diff(np.append(knots, knots[0] + self.period))
            B, D = _tridiag_system(h, cyclic=True)
            F = np.linalg.solve(B, D)
            S = D.T @ F
        else:
            raise ConfigurationError(f"unknown spline kind {self.kind!r}")
        object.__setattr__(self, "_F", F)
        object.__setattr__(self, "_S", 0.5 * (S + S.T))

    @property
    def n_basis(self) -> int:
        return self.knots.size

    def _locate(self, x):
        kn = self.knots
        if self.kind == "cyclic_cubic":
            x = kn[0] + np.mod(x - kn[0], self.period)
            ext = np.append(kn, kn[0] + self.period)
            j = np.clip(np.searchsorted(ext, x, side="right") - 1, 0, kn.size - 1)
            return x, j, (j + 1) % kn.size, ext[j], ext[j + 1]
        j = np.clip(np.searchsorted(kn, x, side="right") - 1, 0, kn.size - 2)
        return x, j, j + 1, kn[j], kn[j + 1]

    def _rows(self, x, j, jp, xl, xr):
        n = x.size
        h = xr - xl
        am = (xr - x) / h
        ap = (x - xl) / h
        cm = ((xr - x) ** 3 / h - h * (xr - x)) / 6.0
        cp = ((x - xl) ** 3 / h - h * (x - xl)) / 6.0
        X = cm[:, None] * self._F[j] + cp[:, None] * self._F[jp]
        X[np.arange(n), j] += am
        X[np.arange(n), jp] += ap
        return X

    def _drows(self, x, j, jp, xl, xr):
        # derivative of the basis rows with respect to x
        n = x.size
        h = xr - xl
        cm = (-3.0 * (xr - x) ** 2 / h + h) / 6.0
        cp = (3.0 * (x - xl) ** 2 / h - h) / 6.0
        X = cm[:, None] * self._F[j] + cp[:, None] * self._F[jp]
        X[np.arange(n), j] -= 1.0 / h
        X[np.arange(n), jp] += 1.0 / h
        return X

    def __call__(self, x) -> np.ndarray:
        return basis_eval(self, x)

    def penalty(self) -> np.ndarray:
        return self._S.copy()


def basis_eval(basis, x) -> np.ndarray:
    """Evaluate a basis at ``x``; returns an ``len(x) x n_basis`` matrix."""
    if isinstance(basis, TensorBasis):
        return basis(x)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("basis evaluation needs finite covariate values")
    xr, j, jp, xl, xh = basis._locate(x)
    if basis.kind == "cyclic_cubic":
        return basis._rows(xr, j, jp, xl, xh)
    X = basis._rows(xr, j, jp, xl, xh)
    kn = basis.knots
    for side, edge, mask in ((0, kn[0], xr < kn[0]), (1, kn[-1], xr > kn[-1])):
        if mask.any():
            e = np.full(mask.sum(), edge)
            jj, jjp, xl_, xh_ = basis._locate(e)[1:]
            X[mask] = basis._rows(e, jj, jjp, xl_, xh_) + (xr[mask] - edge)[:, None] * basis._drows(
                e, jj, jjp, xl_, xh_)
    return X


def penalty(basis) -> np.ndarray:
    """Second-derivative penalty ``P`` with ``c' P c = integral of f''(x)^2``.

    For tensor bases the sum of the marginal penalties is returned; use
    :meth:`TensorBasis.penalties` for the separate components.
    """
    if isinstance(basis, TensorBasis):
        return sum(basis.penalties())
    return basis.penalty()


@dataclass(frozen=True)
class TensorBasis:
    """Row-wise Kronecker product of marginal spline bases."""

    margins: tuple

    kind = "tensor"

    @property
    def n_basis(self) -> int:
        return int(np.prod([m.n_basis for m in self.margins]))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != len(self.margins):
            raise ConfigurationError("tensor basis expects an (n, n_margins) covariate array")
        out = np.ones((x.shape[0], 1))
        for d, m in enumerate(self.margins):
            B = basis_eval(m, x[:, d])
            out = (out[:, :, None] * B[:, None, :]).reshape(x.shape[0], -1)
        return out

    def penalties(self):
        sizes = [m.n_basis for m in self.margins]
        out = []
        for d, m in enumerate(self.margins):
            P = np.ones((1, 1))
            for e, k in enumerate(sizes):
                P = np.kron(P, m.penalty() if e == d else np.eye(k))
            out.append(P)
        return out

    def penalty(self):
        return penalty(self)


def quantile_knots(x, n_knots: int = 10) -> np.ndarray:
    """Knots at evenly spaced quantiles of the distinct covariate values."""
    u = np.unique(np.asarray(x, dtype=float))
    if u.size < 3:
        raise ConfigurationError("need at least 3 distinct covariate values for a spline")
    k = min(n_knots, u.size)
    return np.unique(np.quantile(u, np.linspace(0, 1, k)))


def month_basis(n_knots: int = 12) -> SplineBasis:
    """Cyclic cubic basis over months 1..12 with knots spread over one year."""
    knots = 1.0 + 12.0 * np.arange(n_knots) / n_knots
    return SplineBasis("cyclic_cubic", knots, period=12.0)


def loess(x, y, span: float = 0.75, degree: int = 2, at=None) -> np.ndarray:
    """Local polynomial regression with tricube weights.

    Each target point is fitted by weighted least squares over the
    ``floor(span * n)`` nearest observations (all observations with an
    enlarged bandwidth when ``span > 1``).  No robustness iterations.

    Parameters
    ----------
    x, y : array_like
        Observations.
    span : float
        Fraction of points in each local neighbourhood.
    degree : int
        Degree of the local polynomial (0, 1 or 2).
    at : array_like, optional
        Evaluation points; defaults to ``x``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigurationError("x and y must be 1-d arrays of equal length")
    n = x.size
    if n < degree + 2:
        raise ConfigurationError(f"loess needs at least {degree + 2} points")
    if np.ptp(x) == 0:
        raise ConfigurationError("loess is degenerate when all x are equal")
    q = int(np.floor(n * span))
    if q < degree + 1:
        raise ConfigurationError("span too small for the requested degree")
    targets = x if at is None else np.atleast_1d(np.asarray(at, dtype=float))
    out = np.empty(targets.size)
    for i, x0 in enumerate(targets):
        d = np.abs(x - x0)
        if span <= 1:
            h = np.partition(d, q - 1)[q - 1]
        else:
            h = d.max() * span
        if h <= 0:
            h = np.min(d[d > 0])
        r = np.clip(d / h, 0.0, 1.0)
        w = (1.0 - r**3) ** 3
        sw = np.sqrt(w)
        A = np.vander(x - x0, degree + 1, increasing=True) * sw[:, None]
        coef = np.linalg.lstsq(A, y * sw, rcond=None)[0]
        out[i] = coef[0]
    return out
