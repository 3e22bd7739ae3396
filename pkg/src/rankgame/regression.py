"""Least-squares conditional expectations on bases in ranked coordinates."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb

import numpy as np
from scipy.linalg import solve_triangular


class SingularRegressionError(np.linalg.LinAlgError):
    def __init__(self, step, detail=""):
        self.step = step
        super().__init__(f"rank-deficient regression design at time step {step}{': ' + detail if detail else ''}")


class BasisTooLargeError(ValueError):
    pass


_DEP_TOL = 1e-12  # on squared residual norms of unit columns


@dataclass(frozen=True)
class RegressionBasis:
    """Total-degree polynomials in standardized ranked coordinates.

    ``kind="piecewise-linear"`` appends, per coordinate, ramps ``max(z - q, 0)``
    at ``knots`` interior sample quantiles ``q``; this tracks kinked value
    functions far better than raising the polynomial degree.
    ``kind="spline"`` squares the ramps (a C1 quadratic spline), which keeps
    the fitted slope, and hence the control estimate, free of knot jitter.  With ``include_barrier_features`` the barrier values at the node are added
    as two extra regressors.  Columns that are constant or affinely dependent on
    earlier ones (a point-mass start, ``U - L`` constant) are dropped when
    ``drop_degenerate`` is set, otherwise the step is reported as singular.
    """

    degree: int = 2
    include_barrier_features: bool = True
    drop_degenerate: bool = True
    kind: str = "polynomial"
    knots: int = 16

    KINDS = ("polynomial", "piecewise-linear", "spline")

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("basis degree must be >= 0")
        if self.kind not in self.KINDS:
            raise ValueError(f"unsupported basis kind {self.kind!r}; expected one of {self.KINDS}")
        if self.knots < 0:
            raise ValueError("knots must be >= 0")

    def size(self, n):
        ramps = n * self.knots if self.kind != "polynomial" else 0
        return comb(n + self.degree, self.degree) + ramps + (2 if self.include_barrier_features else 0)

    def check_size(self, n, m_paths):
        p = self.size(n)
        if p > m_paths / 10:
            raise BasisTooLargeError(f"basis of {p} functions exceeds M/10 = {m_paths / 10:g}")

    def design(self, state, lower=None, upper=None):
        M, n = state.shape
        mu = state.mean(axis=0)
        sd = state.std(axis=0)
        z = np.where(sd > 0, (state - mu) / np.where(sd > 0, sd, 1.0), 0.0)
        cols = [np.ones(M)]
        for d in range(1, self.degree + 1):
            for idx in combinations_with_replacement(range(n), d):
                cols.append(np.prod(z[:, idx], axis=1))
        n_poly = len(cols)  # ramps and barrier features may be dropped silently
        if self.kind != "polynomial" and self.knots:
            power = 2 if self.kind == "spline" else 1
            probs = np.arange(1, self.knots + 1) / (self.knots + 1)
            for k in range(n):
                for q in np.unique(np.quantile(z[:, k], probs)):
                    cols.append(np.maximum(z[:, k] - q, 0.0) ** power)
        if self.include_barrier_features and lower is not None:
            for b in (lower, upper):
                s = b.std()
                cols.append((b - b.mean()) / s if s > 0 else np.zeros(M))
        return np.column_stack(cols), n_poly


@dataclass
class Fit:
    fitted: np.ndarray
    design: np.ndarray  # kept columns, scaled to unit norm
    chol: np.ndarray  # upper Cholesky factor of design.T @ design
    kept: np.ndarray
    cond: float
    dropped: int
    scale: np.ndarray = None  # norms of the kept original columns

    def coefficients(self, targets):
        return solve_triangular(self.chol, solve_triangular(self.chol, self.design.T @ targets, trans="T"))

    def project(self, targets):
        """Fitted values of further targets on the same design."""
        targets = np.asarray(targets)
        if targets.ndim == 1 and targets.size and self.kept.size and self.kept[0] == 0 \
                and np.all(targets == targets[0]):
            # the intercept spans constants; skip the rounding of a solve
            return np.full(targets.shape, targets[0], dtype=float)
        return self.design @ self.coefficients(targets)


def _ordered_cholesky(gram):
    """Column-ordered Cholesky of a unit-diagonal Gram matrix; skips dependent columns."""
    p = gram.shape[0]
    r = np.zeros((p, p))
    keep = []
    for k in range(p):
        v = gram[keep, k]
        rk = solve_triangular(r[np.ix_(keep, keep)], v, trans="T") if keep else v
        d = gram[k, k] - rk @ rk
        if d <= _DEP_TOL:
            continue
        r[keep, k] = rk
        r[k, k] = np.sqrt(d)
        keep.append(k)
    keep = np.asarray(keep, dtype=int)
    return r[np.ix_(keep, keep)], keep


def fit_design(design, n_poly, target, step, drop_degenerate=True):
    """Least squares through the scaled normal equations, in a fixed column order.

    A column is dropped when its residual norm after projecting out the
    earlier kept columns is below ``sqrt(1e-12)`` of its own norm.
    """
    norms = np.linalg.norm(design, axis=0)
    nonzero = np.flatnonzero(norms > 0)
    a = design[:, nonzero] / norms[nonzero]
    r, keep = _ordered_cholesky(a.T @ a)
    kept = nonzero[keep]
    dropped_poly = sorted(int(i) for i in np.setdiff1d(np.arange(n_poly), kept))
    if dropped_poly and not drop_degenerate:
        raise SingularRegressionError(step, f"columns {dropped_poly} are dependent")
    d = np.abs(np.diag(r))
    cond = float(d.max() / d.min()) if d.size else float("inf")
    fit = Fit(np.empty(0), np.ascontiguousarray(a[:, keep]), r, kept, cond, design.shape[1] - kept.size)
    fit.fitted = fit.project(target)
    fit.scale = norms[kept]
    return fit


def full_coefficients(fit, targets, n_cols):
    """Coefficients on the original (unscaled) columns; dropped columns get 0."""
    coef = np.zeros((n_cols,) + np.shape(targets)[1:])
    coef[fit.kept] = (fit.coefficients(targets).T / fit.scale).T
    return coef
