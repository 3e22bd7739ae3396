"""Dynkin games, game (Israeli) option pricing and hedge replication on reflected-BSDE solutions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bsde import BsdeSolution, MonteCarloConfig, solve_reflected_lsmc
from .forms import LinearGenerator
from .model import ModelParams, ProblemSpec, validate_params
from .sde import MarketPaths, TimeGrid, log_price_params, martingale_check, simulate_market

DEFAULT_EPS_HIT = 1e-8


class MeasureChangeError(RuntimeError):
    """The risk-neutral martingale gate failed; no price is reported."""


@dataclass(frozen=True)
class GamePayoffSpec:
    terminal: Callable
    lower: Callable
    upper: Callable

    @classmethod
    def from_problem(cls, spec: ProblemSpec):
        return cls(spec.terminal, spec.lower, spec.upper)

    def problem(self, generator=None, lipschitz_c=2.0, description=""):
        return ProblemSpec(generator or LinearGenerator(), self.terminal, self.lower, self.upper, lipschitz_c, description)


@dataclass(frozen=True)
class Discounted:
    """``exp(-r0 t) f(t, x)``; with ``at`` set, the time argument is pinned (terminal payoffs)."""

    form: Callable
    r0: float
    at: float | None = None

    def __call__(self, t, x):
        t = self.at if self.at is not None else t
        return np.exp(-self.r0 * np.asarray(t, dtype=float)) * self.form(t, x)


# ---------------------------------------------------------------------------
# stopping rules and Dynkin payoffs

@dataclass(frozen=True, eq=False)
class StoppingRule:
    hit_tolerance: float
    tau_hat: np.ndarray  # per-path holder index (lower contact), N if never
    lambda_hat: np.ndarray  # per-path writer index (upper contact), N if never


def first_index(hits, default):
    """First True along axis 1, else ``default``."""
    any_hit = hits.any(axis=1)
    return np.where(any_hit, hits.argmax(axis=1), default)


def extract_stopping_times(sol: BsdeSolution, spec: ProblemSpec = None, eps_hit: float | None = None) -> StoppingRule:
    """First grid time before T at which ``Y`` is within ``eps_hit`` of a barrier.

    Without ``eps_hit`` the tolerance is ``max(1e-8, 2 |dK|)`` per node, so
    every clamped node counts as contact.
    """
    y, lo, up = sol.y[:, :-1], sol.lower[:, :-1], sol.upper[:, :-1]
    N = sol.grid.steps
    if eps_hit is None:
        eps_lo = np.maximum(DEFAULT_EPS_HIT, 2 * sol.dkplus)
        eps_up = np.maximum(DEFAULT_EPS_HIT, 2 * sol.dkminus)
        eps = DEFAULT_EPS_HIT
    else:
        eps_lo = eps_up = eps = float(eps_hit)
    tau = first_index(y <= lo + eps_lo, N)
    lam = first_index(y >= up - eps_up, N)
    return StoppingRule(eps, tau, lam)


def _take(a, idx):
    return np.take_along_axis(a, idx[:, None], axis=1)[:, 0]


def dynkin_payoff(sol: BsdeSolution, lam, tau):
    """Per-path ``R(lam, tau)``: running term up to ``tau ^ lam`` plus the payoff of whoever stops first.

    Ties before ``T`` go to the holder (lower payoff); at ``T`` the terminal value applies.
    """
    N = sol.grid.steps
    lam = np.asarray(lam, dtype=int)
    tau = np.asarray(tau, dtype=int)
    stop = np.minimum(lam, tau)
    run = np.concatenate([np.zeros((sol.running.shape[0], 1)), np.cumsum(sol.running, axis=1)], axis=1)
    pay = np.where(stop == N, sol.y[:, N], np.where(tau <= lam, _take(sol.lower, tau), _take(sol.upper, lam)))
    return _take(run, stop) + pay


def option_payoff(sol: BsdeSolution, lam, s):
    """Holder exercises at ``s``, writer cancels at ``lam``: ``g`` if ``s ^ lam = T``, ``L(s)`` if ``s <= lam``, else ``U(lam)``."""
    N = sol.grid.steps
    lam = np.asarray(lam, dtype=int)
    s = np.asarray(s, dtype=int)
    return np.where(np.minimum(s, lam) == N, sol.y[:, N],
                    np.where(s <= lam, _take(sol.lower, s), _take(sol.upper, lam)))


@dataclass(frozen=True)
class GameValue:
    value: float
    se: float


def dynkin_value(sol: BsdeSolution) -> GameValue:
    return GameValue(sol.y0, sol.se)


# ---------------------------------------------------------------------------
# saddle-point check

@dataclass(frozen=True)
class Strategy:
    name: str
    rule: Callable  # sol -> per-path stopping index

    def __call__(self, sol):
        return np.asarray(self.rule(sol), dtype=int)


def deterministic(j):
    return Strategy(f"time index {j}", lambda sol: np.full(sol.y.shape[0], min(j, sol.grid.steps)))


def lower_offset_hit(off):
    """Holder stops once ``Y <= L + off``."""
    def rule(sol):
        return first_index(sol.y[:, :-1] <= sol.lower[:, :-1] + off, sol.grid.steps)
    return Strategy(f"Y <= L + {off:g}", rule)


def upper_offset_hit(off):
    """Writer stops once ``Y >= U - off``."""
    def rule(sol):
        return first_index(sol.y[:, :-1] >= sol.upper[:, :-1] - off, sol.grid.steps)
    return Strategy(f"Y >= U - {off:g}", rule)


def sample_strategies(sol: BsdeSolution, side: str, m_trials: int, seed: int = 0, state=None):
    """Alternative grid-time rules: deterministic times, barrier-offset hits and state-level hits.

    ``side`` is ``"holder"`` or ``"writer"``.  The state-level rules need the
    ranked state the solution was computed on.
    """
    if side not in ("holder", "writer"):
        raise ValueError("side must be 'holder' or 'writer'")
    rng = np.random.default_rng(seed)
    N = sol.grid.steps
    gap = float(np.median(sol.upper[:, 0] - sol.lower[:, 0]))
    out = []
    for k in range(m_trials):
        kind = k % 3
        if kind == 0:
            out.append(deterministic(int(rng.integers(0, N + 1))))
        elif kind == 1:
            off = float(rng.uniform(0.0, 2.0 * gap))
            out.append(lower_offset_hit(off) if side == "holder" else upper_offset_hit(off))
        else:
            if state is None:
                out.append(deterministic(int(rng.integers(0, N + 1))))
                continue
            x = state[:, :-1, 0]
            level = float(np.quantile(x[:, -1], rng.uniform(0.1, 0.9)))
            below = bool(rng.integers(0, 2))
            hits = x <= level if below else x >= level
            idx = first_index(hits, N)
            out.append(Strategy(f"x_1 {'<=' if below else '>='} {level:.4g}", lambda sol, _i=idx: _i))
    return out


@dataclass(frozen=True)
class SaddleRow:
    side: str
    name: str
    mean: float
    se: float  # standard error of the paired difference against the cashflow
    margin: float  # >= 0 means the inequality holds


@dataclass(frozen=True)
class SaddleReport:
    value: float
    value_se: float
    realized: float
    realized_se: float
    rows: tuple
    n_se: float

    @property
    def realized_ok(self):
        return abs(self.realized - self.value) <= self.n_se * self.realized_se

    @property
    def worst_holder_margin(self):
        return min((r.margin for r in self.rows if r.side == "holder"), default=math.inf)

    @property
    def worst_writer_margin(self):
        return min((r.margin for r in self.rows if r.side == "writer"), default=math.inf)

    @property
    def passed(self):
        return self.realized_ok and all(r.margin >= 0 for r in self.rows)


def _paired_se(a, b):
    d = a - b
    return float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0


def saddle_check(sol: BsdeSolution, rule: StoppingRule, holder_alternatives=(), writer_alternatives=(),
                 n_se: float = 3.0) -> SaddleReport:
    """``E[R(lam_hat, tau_alt)] <= V + n_se SE`` and ``E[R(lam_alt, tau_hat)] >= V - n_se SE``.

    Standard errors are those of the per-path difference between the
    realized payoff and the solver cashflow (whose mean is ``V``), which
    removes most of the common noise.
    """
    V = sol.y0
    cash = sol.cashflow
    base = dynkin_payoff(sol, rule.lambda_hat, rule.tau_hat)
    rows = []
    for strat in holder_alternatives:
        r = dynkin_payoff(sol, rule.lambda_hat, strat(sol))
        se = _paired_se(r, cash)
        rows.append(SaddleRow("holder", strat.name, float(r.mean()), se, V + n_se * se - float(r.mean())))
    for strat in writer_alternatives:
        r = dynkin_payoff(sol, strat(sol), rule.tau_hat)
        se = _paired_se(r, cash)
        rows.append(SaddleRow("writer", strat.name, float(r.mean()), se, float(r.mean()) - (V - n_se * se)))
    return SaddleReport(V, sol.se, float(base.mean()), _paired_se(base, cash), tuple(rows), n_se)


# ---------------------------------------------------------------------------
# game option pricing

@dataclass(frozen=True, eq=False)
class PriceResult:
    price: float
    se: float
    solution: BsdeSolution
    market: MarketPaths
    payoff: GamePayoffSpec
    problem: ProblemSpec
    martingale: object


def discounted_problem(payoff: GamePayoffSpec, r0: float, T: float) -> ProblemSpec:
    return ProblemSpec(LinearGenerator(), Discounted(payoff.terminal, r0, at=T), Discounted(payoff.lower, r0),
                       Discounted(payoff.upper, r0), lipschitz_c=2.0, description="discounted game option")


def price_game_option(params: ModelParams, r0: float, p0hat, payoff: GamePayoffSpec,
                      mc: MonteCarloConfig = MonteCarloConfig(), gate_n_se: float = 3.0) -> PriceResult:
    """Risk-neutral price at ``t0 = 0`` from the driftless discounted reflected BSDE in ranked prices."""
    report = validate_params(params)
    if not report.passed:
        raise ValueError(f"invalid model parameters:\n{report}")
    T = params.horizon_T
    grid = TimeGrid(0.0, T, mc.steps_for(T))
    market = simulate_market(params, r0, p0hat, grid, mc.paths, mc.seed, mode="risk-neutral")
    gate = martingale_check(market, gate_n_se)
    if not gate.passed:
        raise MeasureChangeError(f"discounted stock means {gate.means.tolist()} miss {gate.target.tolist()} "
                                 f"by more than {gate_n_se} SE {gate.se.tolist()}")
    problem = discounted_problem(payoff, r0, T)
    sol = solve_reflected_lsmc(problem, market.log_ranked, log_price_params(params, r0, "risk-neutral"), mc.basis,
                               state=market.ranked_stocks)
    t0 = grid.t0
    scale = math.exp(r0 * t0)
    return PriceResult(scale * sol.y0, scale * sol.se, sol, market, payoff, problem, gate)


# ---------------------------------------------------------------------------
# hedging

@dataclass(frozen=True, eq=False)
class HedgeStrategy:
    initial: float
    pibar: np.ndarray  # (M, N, n) by rank
    pi: np.ndarray  # (M, N, n) by named stock
    wealth: np.ndarray  # (M, N+1)
    sigma: np.ndarray


def extract_hedge(sol: BsdeSolution, market: MarketPaths, rule: StoppingRule, r0: float,
                  returns: str = "realized") -> HedgeStrategy:
    """``pibar_i(s) = exp(r0 s) Z_i(s) 1{s <= lam}``, inverted to per-stock amounts and run forward.

    ``returns="euler"`` steps ``dY = r0 Y ds + pibar . dbeta`` on the ranked
    drivers of the BSDE grid; ``returns="realized"`` trades the simulated
    stocks and bond at their actual simple returns.
    """
    if returns not in ("euler", "realized"):
        raise ValueError("returns must be 'euler' or 'realized'")
    sig = market.params.sigma_arr
    if np.any(sig == 0):
        raise ValueError("a zero volatility makes the rank inversion singular")
    grid = sol.grid
    M, N, n = sol.zhat.shape
    times = grid.times
    alive = np.arange(N)[None, :] < rule.lambda_hat[:, None]  # no trading once the writer has cancelled
    pibar = np.exp(r0 * times[:-1])[None, :, None] * sol.zhat * alive[..., None]
    rank_idx = market.log_ranked.rank_index.astype(np.intp)  # rank of stock k over step j
    pi = np.take_along_axis(pibar, rank_idx, axis=2) / sig[rank_idx]
    db = market.log_ranked.binc
    H = math.exp(r0 * grid.t0) * sol.y0
    wealth = np.empty((M, N + 1))
    wealth[:, 0] = H
    for j in range(N):
        w = wealth[:, j]
        if returns == "euler":
            wealth[:, j + 1] = w * (1.0 + r0 * grid.dt) + (pibar[:, j] * db[:, j]).sum(axis=1)
        else:
            ret = market.stocks[:, j + 1] / market.stocks[:, j] - 1.0
            risky = pi[:, j].sum(axis=1)
            wealth[:, j + 1] = w + (w - risky) * math.expm1(r0 * grid.dt) + (pi[:, j] * ret).sum(axis=1)
    return HedgeStrategy(H, pibar, pi, wealth, sig)


def rank_identity_gap(hedge: HedgeStrategy, market: MarketPaths, relative: bool = False):
    """``max |pibar_i - sigma_i pi_(stock at rank i)|``.

    The identity holds by construction up to the rounding of one division
    and one product, so ``relative=True`` (the gap over ``|pibar|``) is
    bounded by ``2 eps``.
    """
    order = np.argsort(market.log_ranked.rank_index, axis=2, kind="stable")  # stock at rank i
    pi_by_rank = np.take_along_axis(hedge.pi, order, axis=2)
    gap = np.abs(hedge.pibar - hedge.sigma * pi_by_rank)
    if relative:
        gap = np.divide(gap, np.abs(hedge.pibar), out=np.zeros_like(gap), where=hedge.pibar != 0)
    return float(np.max(gap, initial=0.0))


IDENTITY_RTOL = 2.0 * np.finfo(float).eps


@dataclass(frozen=True)
class ReplicationReport:
    min_slack: float
    violating_fraction: float
    tolerance: float
    terminal_rel_error: float  # mean |slack at T| over the initial endowment
    pairs: int


def default_slack_tolerance(sol: BsdeSolution, market: MarketPaths):
    """``3 sigma_max max(P) sqrt(dt)`` scale of a one-step hedging error."""
    return 3.0 * float(market.params.sigma_arr.max()) * float(market.stocks.max()) * math.sqrt(sol.grid.dt)


def replication_check(hedge: HedgeStrategy, sol: BsdeSolution, market: MarketPaths, rule: StoppingRule,
                      tolerance: float | None = None) -> ReplicationReport:
    """Slack ``Y^{pi,H}(s ^ lam) - R(lam, s)`` over every path and grid time ``s``.

    Payoffs are undiscounted: the solution's discounted barriers are scaled
    back by ``exp(r0 s)``.
    """
    tol = default_slack_tolerance(sol, market) if tolerance is None else float(tolerance)
    M, N1 = hedge.wealth.shape
    N = N1 - 1
    r0 = market.r0
    growth = np.exp(r0 * sol.grid.times)
    lam = rule.lambda_hat
    slack = np.empty((M, N1))
    for j in range(N1):
        s = np.full(M, j)
        stop = np.minimum(s, lam)
        w = _take(hedge.wealth, stop)
        pay = option_payoff(sol, lam, s) * growth[np.where(s <= lam, s, lam)]
        slack[:, j] = w - pay
    viol = float(np.mean(slack < -tol)) if np.isfinite(tol) else 0.0
    denom = abs(hedge.initial) if hedge.initial != 0 else 1.0
    term_err = float(np.mean(np.abs(slack[:, N])) / denom)
    return ReplicationReport(float(slack.min()), viol, tol, term_err, int(slack.size))
