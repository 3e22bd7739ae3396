"""Two-barrier reflected BSDE solvers: regression Monte Carlo, penalization, 1-D lattice."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, ProblemSpec, check_in_wedge
from .regression import RegressionBasis, fit_design, full_coefficients
from .sde import RankedDecomposition, TimeGrid, rank_paths, simulate_paths


class StabilityError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    grid: TimeGrid
    y: np.ndarray  # (M, N+1)
    zhat: np.ndarray  # (M, N, n)
    kplus: np.ndarray  # (M, N+1), K+(t0) = 0
    kminus: np.ndarray
    y0: float
    se: float
    lower: np.ndarray  # barrier values along the paths, (M, N+1)
    upper: np.ndarray
    running: np.ndarray  # generator (plus penalty) times dt at each node, (M, N)
    cashflow: np.ndarray  # per-path Y(T) + sum(running + dK+ - dK-); its mean is y0
    mode: str = "two-sided"
    penalty: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def dkplus(self):
        return np.diff(self.kplus, axis=1)

    @property
    def dkminus(self):
        return np.diff(self.kminus, axis=1)


def barrier_paths(spec: ProblemSpec, state, times):
    lower = np.empty(state.shape[:2])
    upper = np.empty(state.shape[:2])
    for j, t in enumerate(times):
        lower[:, j] = spec.lower(t, state[:, j])
        upper[:, j] = spec.upper(t, state[:, j])
    return lower, upper


def _control_fit(phi, db, resid, step):
    """``Z(x) = sum_k a_k phi_k(x)`` fitted by least squares of ``resid`` on ``phi (x) dbeta``.

    Since ``dbeta`` is independent of the state with variance ``dt``, the
    minimizer is ``E[resid dbeta | x] / dt``, the usual control estimate,
    but the residual of this fit is second order so the noise is far lower
    than projecting ``resid * dbeta / dt`` directly.
    """
    M, p = phi.shape
    n = db.shape[1]
    design = (phi[:, :, None] * db[:, None, :]).reshape(M, p * n)
    fit = fit_design(design, 0, resid, step)
    coef = full_coefficients(fit, resid, p * n).reshape(p, n)
    return phi @ coef


def _backward(spec, dec, params, basis, state, mode, penalty):
    state = dec.ranked if state is None else state
    M, N1, n = state.shape
    if n != params.n or dec.binc.shape != (M, N1 - 1, n):
        raise ValueError("decomposition does not match params/state")
    basis.check_size(n, M)
    N = N1 - 1
    grid = dec.grid
    dt = grid.dt
    times = grid.times
    if mode != "two-sided" and penalty * dt > 1.0:
        raise StabilityError(f"penalty*dt = {penalty * dt:g} > 1; refine the time grid")

    lower, upper = barrier_paths(spec, state, times)
    y = np.empty((M, N1))
    y[:, N] = spec.g(state[:, N])
    zhat = np.empty((M, N, n))
    dkp = np.zeros((M, N))
    dkm = np.zeros((M, N))
    running = np.empty((M, N))
    cond = np.ones(N)
    dropped = np.zeros(N, dtype=int)

    for j in range(N - 1, -1, -1):
        x = state[:, j]
        target = y[:, j + 1]
        db = dec.binc[:, j]
        if np.ptp(x, axis=0).max() == 0.0:
            # point mass: the conditional expectation is the sample mean
            c = np.full(M, target.mean())
            resid = target - c
            z = np.broadcast_to(np.linalg.lstsq(db, resid, rcond=None)[0], (M, n))
        else:
            design, n_poly = basis.design(x, lower[:, j], upper[:, j])
            fit = fit_design(design, n_poly, target, j, basis.drop_degenerate)
            c = fit.fitted
            resid = target - c
            z = _control_fit(design[:, fit.kept], db, resid, j)
            cond[j], dropped[j] = fit.cond, fit.dropped
        zhat[:, j] = z
        drift = np.asarray(spec.generator(times[j], x, c, z), dtype=float)
        if mode == "lower":
            drift = drift - penalty * np.maximum(c - upper[:, j], 0.0)
        elif mode == "upper":
            drift = drift + penalty * np.maximum(lower[:, j] - c, 0.0)
        running[:, j] = drift * dt
        yt = c + running[:, j]
        yj = yt
        if mode in ("two-sided", "lower"):
            dkp[:, j] = np.maximum(lower[:, j] - yt, 0.0)
            yj = np.maximum(yj, lower[:, j])
        if mode in ("two-sided", "upper"):
            dkm[:, j] = np.maximum(yt - upper[:, j], 0.0)
            yj = np.minimum(yj, upper[:, j])
        y[:, j] = yj

    kplus = np.zeros((M, N1))
    kminus = np.zeros((M, N1))
    np.cumsum(dkp, axis=1, out=kplus[:, 1:])
    np.cumsum(dkm, axis=1, out=kminus[:, 1:])
    cashflow = y[:, N] + running.sum(axis=1) + kplus[:, N] - kminus[:, N]
    se = float(cashflow.std(ddof=1) / math.sqrt(M)) if M > 1 else float("nan")
    diag = {
        "condition_numbers": cond.tolist(),
        "dropped_columns": dropped.tolist(),
        "lower_clamps": (dkp > 0).sum(axis=0).tolist(),
        "upper_clamps": (dkm > 0).sum(axis=0).tolist(),
    }
    return BsdeSolution(grid, y, zhat, kplus, kminus, float(y[:, 0].mean()), se, lower, upper, running,
                        cashflow, mode, float(penalty), diag)


def solve_reflected_lsmc(spec: ProblemSpec, dec: RankedDecomposition, params: ModelParams,
                         basis: RegressionBasis = RegressionBasis(), state=None) -> BsdeSolution:
    """Discretely reflected regression scheme: ``Y_j = median(L_j, E[Y_{j+1}] + G dt, U_j)``.

    ``state`` overrides the ranked coordinates fed to ``G``, ``g``, ``L``, ``U``
    and the regression (the pricing path passes ranked prices here).
    """
    return _backward(spec, dec, params, basis, state, "two-sided", 0.0)


def solve_penalized(spec: ProblemSpec, dec: RankedDecomposition, params: ModelParams,
                    basis: RegressionBasis = RegressionBasis(), penalty: float = 50.0,
                    side: str = "lower-reflected", state=None) -> BsdeSolution:
    """One-barrier reflection plus a penalty for the other barrier.

    ``lower-reflected`` clamps at ``L`` with generator ``G - p (U - y)^-``;
    ``upper-reflected`` clamps at ``U`` with generator ``G + p (L - y)^+``.
    """
    if not (penalty >= 0 and np.isfinite(penalty)):
        raise ValueError("penalty must be finite and >= 0")
    mode = {"lower-reflected": "lower", "upper-reflected": "upper"}.get(side)
    if mode is None:
        raise ValueError(f"side must be 'lower-reflected' or 'upper-reflected', got {side!r}")
    return _backward(spec, dec, params, basis, state, mode, float(penalty))


def skorokhod_residuals(sol: BsdeSolution, spec: ProblemSpec = None, dec: RankedDecomposition = None):
    """Path-averaged ``sum (Y-L) dK+`` and ``sum (U-Y) dK-`` over the grid."""
    y = sol.y[:, :-1]
    low = np.sum((y - sol.lower[:, :-1]) * sol.dkplus, axis=1).mean()
    up = np.sum((sol.upper[:, :-1] - y) * sol.dkminus, axis=1).mean()
    return float(low), float(up)


@dataclass(frozen=True)
class MonteCarloConfig:
    paths: int = 20000
    steps: int | None = None
    dt: float | None = None
    seed: int = 0
    basis: RegressionBasis = RegressionBasis(degree=2, kind="spline", knots=8)

    def steps_for(self, horizon):
        if self.steps is not None:
            return int(self.steps)
        if self.dt is None:
            return 50
        return max(1, int(math.ceil(horizon / self.dt - 1e-9)))


def value_function_estimate(spec: ProblemSpec, params: ModelParams, t: float, x, mc: MonteCarloConfig):
    """``u(t, x)`` as the time-``t`` value of the reflected BSDE started from ``(t, x)``."""
    x = check_in_wedge(np.asarray(x, dtype=float).reshape(1, -1))[0]
    T = params.horizon_T
    if not t < T:
        raise ValueError(f"t={t} must be before the horizon {T}")
    grid = TimeGrid(float(t), float(T), mc.steps_for(T - t))
    bundle = simulate_paths(params, x, grid, mc.paths, mc.seed)
    sol = solve_reflected_lsmc(spec, rank_paths(bundle, params), params, mc.basis)
    return sol.y0, sol.se


# ---------------------------------------------------------------------------
# one-dimensional lattice oracle

@dataclass(frozen=True, eq=False)
class LatticeSolution:
    xs: np.ndarray
    times: np.ndarray
    values: np.ndarray  # (N+1, S)
    region: np.ndarray  # (N+1, S): 0 continuation, 1 lower contact, 2 upper contact
    x0: float

    CONTINUATION, LOWER, UPPER = 0, 1, 2

    def value_at(self, x=None, j=0):
        x = self.x0 if x is None else x
        return float(np.interp(x, self.xs, self.values[j]))

    @property
    def value(self):
        return self.value_at()


def solve_lattice_1d(spec: ProblemSpec, params: ModelParams, grid: TimeGrid, space_halfwidth: float,
                     space_steps: int, x0: float = 0.0, substeps: int = 1) -> LatticeSolution:
    """Moment-matched trinomial backward induction, clamped to ``[L, U]`` at the grid times.

    Nodes are ``x0 + k h`` for ``|k| <= space_steps``; the two edge nodes are
    filled by linear extrapolation.  With ``substeps > 1`` each grid interval
    is crossed in that many unclamped trinomial steps, so the lattice solves
    the game reflected only at the grid times (the problem a regression
    scheme on the same grid approximates) with a finer transition law.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if params.n != 1:
        raise ValueError("the lattice oracle is one-dimensional")
    sig, dlt = params.sigma[0], params.delta[0]
    h = space_halfwidth / space_steps
    dt = grid.dt / substeps
    a = sig**2 * dt / h**2
    b = dlt * dt / h
    if a > 1.0:
        raise StabilityError(f"sigma^2 dt / h^2 = {a:.4g} > 1")
    pu = 0.5 * (a + b * b) + 0.5 * b
    pd = 0.5 * (a + b * b) - 0.5 * b
    pm = 1.0 - a - b * b
    if min(pu, pd, pm) < 0:
        raise StabilityError(f"negative trinomial weight (pu={pu:.3g}, pm={pm:.3g}, pd={pd:.3g})")
    tau = grid.T - grid.t0
    reach = 4.0 * sig * math.sqrt(tau) + abs(dlt) * tau
    if space_halfwidth < reach:
        raise DomainError(f"halfwidth {space_halfwidth:g} below the 4-sigma reach {reach:.4g}")
    xs = x0 + h * np.arange(-space_steps, space_steps + 1)
    X = xs[:, None]
    times = grid.times
    g = spec.g(X)
    span = max(float(np.ptp(g)), 1e-300)
    for edge in (g[:3], g[-3:]):
        if abs(edge[0] - 2 * edge[1] + edge[2]) > 0.01 * span:
            raise DomainError("terminal payoff is not affine at the truncation edge; widen the domain")

    N, S = grid.steps, xs.size
    values = np.empty((N + 1, S))
    region = np.zeros((N + 1, S), dtype=np.int8)
    values[-1] = g
    for j in range(N - 1, -1, -1):
        nxt = values[j + 1]
        for k in range(substeps - 1, -1, -1):
            t = times[j] + k * dt
            c = np.empty(S)
            c[1:-1] = pu * nxt[2:] + pm * nxt[1:-1] + pd * nxt[:-2]
            zi = np.empty(S)
            zi[1:-1] = sig * (nxt[2:] - nxt[:-2]) / (2 * h)
            c[0], c[-1] = 2 * c[1] - c[2], 2 * c[-2] - c[-3]
            zi[0], zi[-1] = zi[1], zi[-2]
            nxt = c + np.asarray(spec.generator(t, X, c, zi[:, None]), dtype=float) * dt
        yt = nxt
        t = times[j]
        lo, up = spec.lower(t, X), spec.upper(t, X)
        region[j] = np.where(yt < lo, 1, np.where(yt > up, 2, 0))
        values[j] = np.minimum(np.maximum(yt, lo), up)
    return LatticeSolution(xs, times, values, region, float(x0))
