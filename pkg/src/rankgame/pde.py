"""Projected explicit finite differences for the two-obstacle problem on the ranked wedge (n = 1, 2)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bsde import DomainError, MonteCarloConfig, StabilityError, value_function_estimate
from .model import ModelParams, ProblemSpec, check_in_wedge
from .sde import TimeGrid

OUTSIDE, INTERIOR, FACE, OUTER = -1, 0, 1, 2


class UnsupportedDimensionError(ValueError):
    pass


class GridNaNError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class WedgeGrid:
    """Square grid on ``[a, b]^n`` restricted to ``x_n <= ... <= x_1``.

    For ``n = 2`` node ``(i, k)`` is the point ``(xs[i], xs[k])`` and lies in
    the wedge iff ``k <= i``.  ``labels`` classifies nodes as interior, face
    (diagonal) or outer truncation shell; ``shell`` marks nodes filled by
    extrapolation rather than by the stencil.
    """

    n: int
    h: float
    bounds: tuple
    alpha: float
    xs: np.ndarray
    labels: np.ndarray
    shell: np.ndarray

    @property
    def shape(self):
        return self.labels.shape

    @property
    def mask(self):
        return self.labels != OUTSIDE

    @property
    def mesh(self):
        """Coordinates of every grid point, shape ``shape + (n,)`` (wedge or not)."""
        if self.n == 1:
            return self.xs[:, None]
        x1, x2 = np.meshgrid(self.xs, self.xs, indexing="ij")
        return np.stack([x1, x2], axis=-1)

    @property
    def nodes(self):
        return self.mesh[self.mask]

    def in_pi_alpha(self):
        """Non-shell wedge nodes whose consecutive gaps are all at least ``alpha``."""
        keep = self.mask & ~self.shell
        if self.n == 2:
            x = self.mesh
            keep &= (x[..., 0] - x[..., 1]) >= self.alpha - 1e-12
        return keep


def alpha_limit(n, bounds):
    a, b = bounds
    return math.inf if n == 1 else float(b - a)


def build_grid(params: ModelParams, bounds, h: float, alpha: float = 0.0) -> WedgeGrid:
    n = params.n
    if n not in (1, 2):
        raise UnsupportedDimensionError(f"finite-difference grids support n in (1, 2), got n={n}")
    if not h > 0:
        raise ValueError("h must be positive")
    a, b = (float(v) for v in bounds)
    steps = int(round((b - a) / h))
    if steps < 4 or abs(a + steps * h - b) > 1e-9 * max(1.0, abs(b)):
        raise DomainError(f"bounds [{a}, {b}] must span at least 4 steps of h={h} exactly")
    if alpha < 0 or alpha >= alpha_limit(n, (a, b)):
        raise DomainError(f"alpha={alpha} outside [0, {alpha_limit(n, (a, b))}) for these bounds")
    xs = a + h * np.arange(steps + 1)
    S = xs.size
    if n == 1:
        labels = np.full(S, INTERIOR, dtype=np.int8)
        labels[[0, -1]] = OUTER
        shell = labels == OUTER
    else:
        i, k = np.meshgrid(np.arange(S), np.arange(S), indexing="ij")
        shell = (k <= i) & ((i == S - 1) | (k == 0))
        labels = np.where(k > i, OUTSIDE, np.where(i == k, FACE, np.where(shell, OUTER, INTERIOR))).astype(np.int8)
    return WedgeGrid(n, float(h), (a, b), float(alpha), xs, labels, shell)


@dataclass(frozen=True, eq=False)
class GridValueFunction:
    grid: WedgeGrid
    timegrid: TimeGrid
    u: np.ndarray  # (N+1,) + grid.shape, NaN outside the wedge
    params: ModelParams = None
    spec: ProblemSpec = field(default=None, repr=False)

    def slice_index(self, t):
        j = (t - self.timegrid.t0) / self.timegrid.dt
        jr = int(round(j))
        if abs(j - jr) > 1e-6 or not 0 <= jr <= self.timegrid.steps:
            raise ValueError(f"t={t} is not a node of the time grid")
        return jr

    def value_at(self, t, x):
        """Piecewise-linear interpolation of the slice at grid time ``t``."""
        full = _symmetrize(self.grid, self.u[self.slice_index(t)])
        x = np.asarray(x, dtype=float).reshape(-1)
        xs = self.grid.xs
        if self.grid.n == 1:
            return float(np.interp(x[0], xs, full))
        pos = np.clip((x - xs[0]) / self.grid.h, 0, xs.size - 1 - 1e-12)
        i0 = np.floor(pos).astype(int)
        w = pos - i0
        i, k = i0
        f = full
        return float((1 - w[0]) * (1 - w[1]) * f[i, k] + w[0] * (1 - w[1]) * f[i + 1, k]
                     + (1 - w[0]) * w[1] * f[i, k + 1] + w[0] * w[1] * f[i + 1, k + 1])


def _symmetrize(grid, u):
    """Fill the mirrored half of the square with coordinate-swap ghosts."""
    if grid.n == 1:
        return u
    return np.where(grid.mask, u, u.T)


def _derivatives(grid, full):
    """Centred first and second differences on the strict interior of the square."""
    h = grid.h
    if grid.n == 1:
        d1 = np.zeros((1,) + full.shape)
        d2 = np.zeros_like(d1)
        d1[0, 1:-1] = (full[2:] - full[:-2]) / (2 * h)
        d2[0, 1:-1] = (full[2:] - 2 * full[1:-1] + full[:-2]) / h**2
        return d1, d2
    d1 = np.zeros((2,) + full.shape)
    d2 = np.zeros_like(d1)
    c = full[1:-1, 1:-1]
    d1[0, 1:-1, 1:-1] = (full[2:, 1:-1] - full[:-2, 1:-1]) / (2 * h)
    d1[1, 1:-1, 1:-1] = (full[1:-1, 2:] - full[1:-1, :-2]) / (2 * h)
    d2[0, 1:-1, 1:-1] = (full[2:, 1:-1] - 2 * c + full[:-2, 1:-1]) / h**2
    d2[1, 1:-1, 1:-1] = (full[1:-1, 2:] - 2 * c + full[1:-1, :-2]) / h**2
    return d1, d2


def _extrapolate_shell(grid, u):
    """Linear extrapolation along the outward normal onto the truncation shell."""
    u = u.copy()
    if grid.n == 1:
        u[0] = 2 * u[1] - u[2]
        u[-1] = 2 * u[-2] - u[-3]
        return u
    S = grid.xs.size
    full = _symmetrize(grid, u)
    # bottom edge k = 0 (x_2 at its minimum), then the top edge i = S-1
    u[1:S - 1, 0] = 2 * full[1:S - 1, 1] - full[1:S - 1, 2]
    u[0, 0] = 2 * u[1, 1] - u[2, 2]
    u[S - 1, 1:S - 1] = 2 * full[S - 2, 1:S - 1] - full[S - 3, 1:S - 1]
    u[S - 1, 0] = 2 * u[S - 2, 0] - u[S - 3, 0]
    u[S - 1, S - 1] = 2 * u[S - 2, S - 2] - u[S - 3, S - 3]
    return u


def operator_terms(spec, params, grid, t, u):
    """``L u + G(t, x, u, sigma grad u)`` on the grid, from the ghost-filled slice."""
    full = _symmetrize(grid, u)
    d1, d2 = _derivatives(grid, full)
    sig, dlt = params.sigma_arr, params.delta_arr
    lu = np.zeros_like(full)
    for i in range(grid.n):
        lu += 0.5 * sig[i] ** 2 * d2[i] + dlt[i] * d1[i]
    z = np.moveaxis(d1, 0, -1) * sig
    gen = np.asarray(spec.generator(t, grid.mesh, full, z), dtype=float)
    return lu + gen


def fd_step(spec, params, grid, t, u_next, dt):
    """One backward step from ``u_next`` at ``t + dt``: returns ``(projected, unprojected)``."""
    tilde = u_next + dt * operator_terms(spec, params, grid, t, u_next)
    tilde = _extrapolate_shell(grid, np.where(grid.shell, 0.0, tilde))
    x = grid.mesh
    proj = np.minimum(np.maximum(tilde, spec.lower(t, x)), spec.upper(t, x))
    if grid.n == 2:
        proj = np.where(grid.mask, proj, np.nan)
        tilde = np.where(grid.mask, tilde, np.nan)
    return proj, tilde


def stability_ratio(params, grid, timegrid):
    return float(np.max(params.sigma_arr**2) * timegrid.dt / grid.h**2)


def solve_obstacle_fd(spec: ProblemSpec, params: ModelParams, grid: WedgeGrid, timegrid: TimeGrid) -> GridValueFunction:
    """Backward projected Euler from ``u(T) = g``."""
    if grid.n != params.n:
        raise ValueError(f"grid has n={grid.n}, model has n={params.n}")
    ratio = stability_ratio(params, grid, timegrid)
    if ratio > 1.0 / (2 * grid.n) + 1e-12:
        raise StabilityError(f"max sigma^2 dt / h^2 = {ratio:.4g} exceeds 1/(2n) = {1 / (2 * grid.n):.4g}")
    N, dt = timegrid.steps, timegrid.dt
    times = timegrid.times
    x = grid.mesh
    u = np.empty((N + 1,) + grid.shape)
    last = np.asarray(spec.g(x), dtype=float)
    u[N] = np.where(grid.mask, last, np.nan) if grid.n == 2 else last
    for j in range(N - 1, -1, -1):
        u[j], _ = fd_step(spec, params, grid, times[j], u[j + 1], dt)
        bad = np.isnan(u[j]) & grid.mask
        if bad.any():
            idx = tuple(int(v) for v in np.argwhere(bad)[0])
            raise GridNaNError(f"NaN at t={times[j]:.6g}, node {idx} x={x[idx].tolist()}")
    return GridValueFunction(grid, timegrid, u, params, spec)


@dataclass(frozen=True, eq=False)
class ResidualReport:
    field: np.ndarray  # (N,) + grid.shape, NaN off the reported region
    swapped: np.ndarray  # the max-outside form of the same operator
    max_abs: float
    identity_gap: float


def complementarity_residual(sol: GridValueFunction, spec: ProblemSpec, params: ModelParams) -> ResidualReport:
    """``min{u - L, max{u - U, F}}`` with ``F = -(u_t + L u + G)`` evaluated on the current slice.

    The time difference is backward from ``u_{j+1}`` and the space operator
    acts on ``u_j``, so the field is a truncation error rather than a scheme
    identity.  Reported on non-shell nodes of the alpha-wedge.
    """
    grid, tg = sol.grid, sol.timegrid
    dt = tg.dt
    x = grid.mesh
    region = grid.in_pi_alpha()
    out = np.full((tg.steps,) + grid.shape, np.nan)
    swp = np.full_like(out, np.nan)
    for j, t in enumerate(tg.times[:-1]):
        uj = sol.u[j]
        F = -((sol.u[j + 1] - uj) / dt + operator_terms(spec, params, grid, t, uj))
        a = uj - spec.lower(t, x)
        b = uj - spec.upper(t, x)
        out[j] = np.where(region, np.minimum(a, np.maximum(b, F)), np.nan)
        swp[j] = np.where(region, np.maximum(b, np.minimum(a, F)), np.nan)
    max_abs = float(np.nanmax(np.abs(out))) if np.isfinite(out).any() else 0.0
    gap = float(np.nanmax(np.abs(out - swp))) if np.isfinite(out).any() else 0.0
    return ResidualReport(out, swp, max_abs, gap)


# ---------------------------------------------------------------------------
# probabilistic / analytic cross-check

@dataclass(frozen=True)
class FdConfig:
    h: float = 0.05
    dt: float = 1e-3
    bounds: tuple | None = None
    alpha: float = 0.0
    c_disc: float = 1.0


@dataclass(frozen=True)
class Discrepancy:
    t: float
    x: tuple
    u_fd: float
    u_mc: float
    se: float
    tolerance: float

    @property
    def passed(self):
        return abs(self.u_fd - self.u_mc) <= self.tolerance


def trusted_padding(params, tau):
    return 4.0 * float(params.sigma_arr.max()) * math.sqrt(max(tau, 0.0)) + float(np.abs(params.delta_arr).max()) * tau


def auto_bounds(params, points, h):
    xs = np.concatenate([np.atleast_1d(p) for _, p in points])
    pad = trusted_padding(params, params.horizon_T) + 4 * h
    a = h * math.floor((xs.min() - pad) / h)
    b = h * math.ceil((xs.max() + pad) / h)
    return a, b


def compare_bsde_pde(spec, params, query_points, mc_config: MonteCarloConfig, fd_config: FdConfig = FdConfig()):
    """Finite-difference and regression Monte Carlo values at ``(t, x)`` query points."""
    pts = [(float(t), check_in_wedge(np.asarray(x, dtype=float).reshape(1, -1))[0]) for t, x in query_points]
    T = params.horizon_T
    bounds = fd_config.bounds or auto_bounds(params, pts, fd_config.h)
    a, b = bounds
    for t, x in pts:
        pad = trusted_padding(params, T - t)
        if not (0 <= t < T) or x.min() < a + pad or x.max() > b - pad:
            raise DomainError(f"query (t={t}, x={x.tolist()}) lies outside the trusted region [{a + pad:.4g}, {b - pad:.4g}]")
    grid = build_grid(params, bounds, fd_config.h, fd_config.alpha)
    tg = TimeGrid(0.0, T, max(1, int(round(T / fd_config.dt))))
    fd = solve_obstacle_fd(spec, params, grid, tg)
    rows = []
    for t, x in pts:
        dt_mc = (T - t) / mc_config.steps_for(T - t)
        u_fd = fd.value_at(t, x)
        u_mc, se = value_function_estimate(spec, params, t, x, mc_config)
        tol = 3 * se + fd_config.c_disc * (fd_config.h**2 + max(tg.dt, dt_mc))
        rows.append(Discrepancy(t, tuple(x.tolist()), u_fd, u_mc, se, tol))
    return rows
