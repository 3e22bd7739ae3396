"""Rank-based particle simulation, ranked decomposition and the market model."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .model import ModelParams, check_in_wedge

WORKERS_ENV = "RANKGAME_WORKERS"
_CHUNK = 2048  # paths per RNG work unit; fixed so output never depends on worker count


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    steps: int

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError("TimeGrid needs at least one step")
        if not self.T > self.t0:
            raise ValueError(f"TimeGrid end {self.T} must exceed start {self.t0}")

    @property
    def dt(self):
        return (self.T - self.t0) / self.steps

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.steps + 1)


def worker_count():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _normals_for_paths(seed, first, last, width):
    out = np.empty((last - first, width))
    for p in range(first, last):
        # key = (seed, path); the Philox counter then walks (step, particle) in row-major order
        bg = np.random.Philox(key=np.array([seed, p], dtype=np.uint64))
        raw = bg.random_raw(width)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        out[p - first] = ndtri(u)
    return out


def brownian_increments(seed, m_paths, steps, n, dt, workers=None):
    """Standard normal increments scaled by ``sqrt(dt)``, shape ``(M, N, n)``.

    Entry ``[p, j, k]`` is a pure function of ``(seed, p, j, k)``.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    width = steps * n
    workers = workers or worker_count()
    bounds = [(a, min(a + _CHUNK, m_paths)) for a in range(0, m_paths, _CHUNK)]
    z = np.empty((m_paths, width))
    if workers == 1 or len(bounds) == 1:
        for a, b in bounds:
            z[a:b] = _normals_for_paths(seed, a, b, width)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for (a, b), block in zip(bounds, pool.map(lambda ab: _normals_for_paths(seed, *ab, width), bounds)):
                z[a:b] = block
    z *= np.sqrt(dt)
    return z.reshape(m_paths, steps, n)


def rank_order(x):
    """Particle index at each rank (rank 0 = largest); ties go to the lower index."""
    return np.argsort(-x, axis=-1, kind="stable")


@dataclass(frozen=True, eq=False)
class PathBundle:
    grid: TimeGrid
    x0: np.ndarray
    paths: np.ndarray  # (M, N+1, n) named particles
    winc: np.ndarray  # (M, N, n)
    seed: int
    mode: str = "physical"
    r0: float | None = None

    @property
    def shape(self):
        return self.paths.shape


def simulate_paths(params: ModelParams, x0, grid: TimeGrid, m_paths: int, seed: int, workers=None) -> PathBundle:
    """Euler scheme with each particle's coefficients frozen at its rank over the step."""
    x0 = check_in_wedge(np.asarray(x0, dtype=float).reshape(1, -1))[0]
    n = params.n
    if x0.shape[0] != n:
        raise ValueError(f"x0 has dimension {x0.shape[0]}, model has n={n}")
    sig, dlt = params.sigma_arr, params.delta_arr
    if not (np.isfinite(sig).all() and np.isfinite(dlt).all() and np.isfinite(x0).all()):
        raise SimulationError("non-finite parameter or initial state")
    N, dt = grid.steps, grid.dt
    winc = brownian_increments(seed, m_paths, N, n, dt, workers)
    paths = np.empty((m_paths, N + 1, n))
    paths[:, 0] = x0
    ranks = np.empty((m_paths, n), dtype=np.intp)
    arange = np.arange(n)
    for j in range(N):
        cur = paths[:, j]
        if n == 1:
            ranks[:] = 0
        else:
            np.put_along_axis(ranks, rank_order(cur), np.broadcast_to(arange, ranks.shape), axis=1)
        nxt = cur + dlt[ranks] * dt + sig[ranks] * winc[:, j]
        bad = ~np.isfinite(nxt)
        if bad.any():
            p = int(np.flatnonzero(bad.any(axis=1))[0])
            raise SimulationError(f"non-finite state at step {j + 1}, path {p}")
        paths[:, j + 1] = nxt
    return PathBundle(grid, x0, paths, winc, int(seed))


@dataclass(frozen=True, eq=False)
class RankedDecomposition:
    ranked: np.ndarray  # (M, N+1, n), descending
    binc: np.ndarray  # (M, N, n) ranked driver increments
    lam: np.ndarray  # (M, N+1, n-1) collision local times
    spreads: np.ndarray  # (M, N+1, n-1)
    rank_index: np.ndarray  # (M, N, n): rank of particle k over step j
    residual: np.ndarray  # (M, N) telescoped top-rank local time before flooring
    floored: float  # total magnitude removed by flooring negative increments
    grid: TimeGrid

    @property
    def lambda_(self):
        return self.lam


def rank_paths(bundle: PathBundle, params: ModelParams) -> RankedDecomposition:
    paths, winc = bundle.paths, bundle.winc
    M, N1, n = paths.shape
    if n != params.n or winc.shape != (M, N1 - 1, n):
        raise ValueError(f"bundle shape {paths.shape} does not match params with n={params.n}")
    dt = bundle.grid.dt
    sig, dlt = params.sigma_arr, params.delta_arr
    if n == 1:
        ranked = paths
        order = np.zeros((M, N1 - 1, 1), dtype=np.intp)
    else:
        ranked = -np.sort(-paths, axis=2)
        order = rank_order(paths[:, :-1])
    binc = np.take_along_axis(winc, order, axis=2)
    rank_index = np.empty(order.shape, dtype=np.int16)
    np.put_along_axis(rank_index, order, np.broadcast_to(np.arange(n, dtype=np.int16), order.shape), axis=2)

    # same operation order as the Euler step, so a step without rank changes gives exactly zero
    predicted = (ranked[:, :-1] + dlt * dt) + sig * binc
    excess = 2.0 * (ranked[:, 1:] - predicted)
    cum = np.cumsum(excess, axis=2)
    residual = cum[..., -1]
    raw = cum[..., :-1]
    floored = float(np.sum(np.maximum(-raw, 0.0)))
    dlam = np.maximum(raw, 0.0)
    lam = np.zeros((M, N1, n - 1))
    np.cumsum(dlam, axis=1, out=lam[:, 1:])
    spreads = ranked[..., :-1] - ranked[..., 1:]
    return RankedDecomposition(ranked, binc, lam, spreads, rank_index, residual, floored, bundle.grid)


@dataclass(frozen=True)
class SpreadStats:
    mean_spread: np.ndarray
    var_spread: np.ndarray
    se_spread: np.ndarray
    mean_lambda: np.ndarray
    var_lambda: np.ndarray
    se_lambda: np.ndarray
    m_paths: int


def spread_stats(dec: RankedDecomposition) -> SpreadStats:
    d = dec.spreads[:, -1]
    lam = dec.lam[:, -1]
    M = d.shape[0]

    def moments(a):
        var = a.var(axis=0, ddof=1) if M > 1 else np.zeros(a.shape[1])
        return a.mean(axis=0), var, np.sqrt(var / M)

    return SpreadStats(*moments(d), *moments(lam), M)


@dataclass(frozen=True, eq=False)
class MarketPaths:
    grid: TimeGrid
    p0hat: np.ndarray  # (p_0, p_1, ..., p_n)
    bond: np.ndarray  # (N+1,)
    stocks: np.ndarray  # (M, N+1, n)
    ranked_stocks: np.ndarray  # (M, N+1, n)
    r0: float
    mode: str
    log_bundle: PathBundle
    log_ranked: RankedDecomposition
    params: ModelParams


def log_price_params(params: ModelParams, r0: float, mode: str) -> ModelParams:
    sig2 = params.sigma_arr**2
    if mode == "physical":
        drift = params.delta_arr - 0.5 * sig2
    elif mode == "risk-neutral":
        drift = r0 - 0.5 * sig2
    else:
        raise ValueError(f"mode must be 'physical' or 'risk-neutral', got {mode!r}")
    return replace(params, delta=tuple(drift))


def simulate_market(params: ModelParams, r0: float, p0hat, grid: TimeGrid, m_paths: int, seed: int,
                    mode: str = "risk-neutral", workers=None) -> MarketPaths:
    """Geometric rank-based prices simulated in log space (positivity by construction)."""
    p0hat = np.asarray(p0hat, dtype=float)
    if p0hat.shape != (params.n + 1,):
        raise ValueError(f"p0hat must hold a bond price and {params.n} stock prices")
    if not np.all(p0hat > 0):
        raise ValueError(f"initial prices must be positive, got {p0hat.tolist()}")
    lp = log_price_params(params, r0, mode)
    bundle = simulate_paths(lp, np.log(p0hat[1:]), grid, m_paths, seed, workers)
    bundle = replace(bundle, mode=mode, r0=float(r0))
    dec = rank_paths(bundle, lp)
    bond = p0hat[0] * np.exp(r0 * (grid.times - grid.t0))
    return MarketPaths(grid, p0hat, bond, np.exp(bundle.paths), np.exp(dec.ranked), float(r0), mode,
                       bundle, dec, params)


@dataclass(frozen=True)
class MartingaleCheck:
    means: np.ndarray
    se: np.ndarray
    target: np.ndarray
    passed: bool


def martingale_check(market: MarketPaths, n_se: float = 3.0) -> MartingaleCheck:
    """Discounted terminal stock means against initial prices."""
    T = market.grid.T - market.grid.t0
    disc = np.exp(-market.r0 * T) * market.stocks[:, -1]
    M = disc.shape[0]
    means = disc.mean(axis=0)
    se = disc.std(axis=0, ddof=1) / np.sqrt(M)
    target = market.p0hat[1:]
    return MartingaleCheck(means, se, target, bool(np.all(np.abs(means - target) <= n_se * se)))
