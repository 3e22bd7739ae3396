"""Model parameters, problem specifications and their runtime validation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .forms import Affine, Constant, LinearGenerator, Put, Call

FAR = 1e9  # stand-in for an infinite barrier


@dataclass(frozen=True)
class ModelParams:
    """Rank-level coefficients: particle at rank ``l`` gets ``delta[l]``, ``sigma[l]``."""

    n: int
    sigma: tuple
    delta: tuple
    horizon_T: float

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))
        object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))
        if len(self.sigma) != self.n or len(self.delta) != self.n:
            raise ValueError(f"sigma/delta must have length n={self.n}")

    @property
    def sigma_arr(self):
        return np.asarray(self.sigma)

    @property
    def delta_arr(self):
        return np.asarray(self.delta)


@dataclass(frozen=True)
class ProblemSpec:
    """Generator ``G(t,x,y,z)``, terminal ``g(x)``, barriers ``L(t,x) < U(t,x)``."""

    generator: Callable
    terminal: Callable
    lower: Callable
    upper: Callable
    lipschitz_c: float
    description: str = ""

    def g(self, x):
        # terminal forms share the (t, x) signature of barriers; t is ignored
        return self.terminal(0.0, x)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    witness: object = None
    margin: float = float("nan")


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple = ()

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        lines = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(f"{status:4s} {c.name}: margin={c.margin:.6g} witness={c.witness}")
        return "\n".join(lines)


def validate_params(params: ModelParams) -> ValidationReport:
    """One report entry per invariant; never raises on bad values."""
    sig2 = np.asarray(params.sigma, dtype=float) ** 2
    checks = []

    ok_n = isinstance(params.n, (int, np.integer)) and params.n >= 1
    checks.append(Check("n_positive", bool(ok_n), None if ok_n else params.n, float(params.n) - 1))

    sig = np.asarray(params.sigma, dtype=float)
    finite = np.isfinite(sig).all() and np.isfinite(params.delta).all()
    i_min = int(np.argmin(sig)) if sig.size else 0
    margin = float(sig[i_min]) if sig.size else float("nan")
    ok = bool(finite and sig.size and margin > 0)
    checks.append(Check("sigma_positive", ok, None if ok else i_min + 1, margin))

    if params.n <= 2:
        checks.append(Check("concavity", True, None, float("inf")))
    else:
        margins = sig2[1:-1] - 0.5 * (sig2[:-2] + sig2[2:])
        i = int(np.argmin(margins))
        ok = bool(margins[i] >= 0)
        checks.append(Check("concavity", ok, None if ok else i + 1, float(margins[i])))

    T = float(params.horizon_T)
    ok = bool(np.isfinite(T) and T > 0)
    checks.append(Check("horizon_positive", ok, None if ok else T, T))
    return ValidationReport(tuple(checks))


class OutsideWedgeError(ValueError):
    pass


def check_in_wedge(points, atol=0.0):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    bad = np.any(np.diff(pts, axis=-1) > atol, axis=-1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise OutsideWedgeError(f"point {pts[i].tolist()} is not weakly decreasing (outside the closed wedge)")
    return pts


def _worst(margins, points, times=None):
    i = int(np.argmin(margins))
    wit = {"x": points[i].tolist()}
    if times is not None:
        wit["t"] = float(np.broadcast_to(times, margins.shape)[i])
    return float(margins[i]), wit


def validate_problem(spec: ProblemSpec, params: ModelParams, sample_points, seed: int = 0) -> ValidationReport:
    """Sampled check of the standing assumptions on ``spec``.

    Passing is necessary, not sufficient: only the supplied points (and
    seeded random times/perturbations at them) are examined.
    """
    pts = check_in_wedge(sample_points)
    if pts.shape[0] == 0:
        raise ValueError("sample_points must be nonempty")
    if pts.shape[1] != params.n:
        raise ValueError(f"sample points have dimension {pts.shape[1]}, model has n={params.n}")
    rng = np.random.default_rng(seed)
    T = float(params.horizon_T)
    c = float(spec.lipschitz_c)
    P, n = pts.shape
    ts = rng.uniform(0.0, T, size=P)
    norm = np.linalg.norm(pts, axis=1)
    checks = []

    lo, up = spec.lower(ts, pts), spec.upper(ts, pts)
    m, w = _worst(up - lo, pts, ts)
    checks.append(Check("barrier_gap", m > 0, None if m > 0 else w, m))

    gT = spec.g(pts)
    lT, uT = spec.lower(T, pts), spec.upper(T, pts)
    m, w = _worst(np.minimum(gT - lT, uT - gT), pts, T)
    checks.append(Check("terminal_sandwich", m >= 0, None if m >= 0 else w, m))

    g0 = spec.generator(ts, pts, np.zeros(P), np.zeros((P, n)))
    m, w = _worst(c * (norm + 1) - np.abs(g0), pts, ts)
    checks.append(Check("generator_growth", m >= 0, None if m >= 0 else w, m))

    m, w = _worst(c * (1 + norm) - (np.abs(lo) + np.abs(up)), pts, ts)
    checks.append(Check("barrier_growth", m >= 0, None if m >= 0 else w, m))

    # difference quotients of G in (y, z): y-only, z-only and joint perturbations
    y1 = rng.normal(size=P)
    z1 = rng.normal(size=(P, n))
    quots = []
    for dy_on, dz_on in ((1, 0), (0, 1), (1, 1)):
        dy = rng.normal(size=P) * dy_on
        dz = rng.normal(size=(P, n)) * dz_on
        denom = np.abs(dy) + np.linalg.norm(dz, axis=1)
        ga = spec.generator(ts, pts, y1, z1)
        gb = spec.generator(ts, pts, y1 + dy, z1 + dz)
        quots.append(np.abs(gb - ga) / np.where(denom > 0, denom, np.inf))
    q = np.max(np.stack(quots), axis=0)
    m, w = _worst(c - q, pts, ts)
    if m < 0:
        w["quotient"] = float(c - m)
    checks.append(Check("generator_lipschitz", m >= -1e-12 * max(c, 1.0), None if m >= -1e-12 * max(c, 1.0) else w, m))

    if P >= 2:
        j = rng.permutation(P)
        dist = np.linalg.norm(pts - pts[j], axis=1)
        gq = np.abs(gT - gT[j]) / np.where(dist > 0, dist, np.inf)
        m, w = _worst(c - gq, pts)
        checks.append(Check("terminal_lipschitz", m >= -1e-12 * max(c, 1.0), None if m >= -1e-12 * max(c, 1.0) else w, m))
    return ValidationReport(tuple(checks))


@dataclass(frozen=True)
class Fixture:
    name: str
    spec: ProblemSpec
    params: ModelParams
    x0: tuple
    notes: dict = field(default_factory=dict)


class UnknownProblemError(KeyError):
    def __str__(self):
        return str(self.args[0])


def _far_lower():
    return Constant(-FAR)


def _far_upper():
    return Constant(FAR)


GAME_PUT_STRIKE = 1.0
GAME_PUT_PENALTY = 0.05


def _fixtures():
    zero = LinearGenerator()
    out = {}

    out["unconstrained-linear"] = Fixture(
        "unconstrained-linear",
        ProblemSpec(zero, Affine((1.0, 1.0)), _far_lower(), _far_upper(), lipschitz_c=2 * FAR + 1,
                    description="g = x_(1) + x_(2), G = 0, barriers at +-1e9"),
        ModelParams(2, (0.6, 0.5), (0.1, 0.2), 1.0),
        (1.0, 0.0),
    )

    out["constant-sandwich"] = Fixture(
        "constant-sandwich",
        ProblemSpec(zero, Constant(1.0), Constant(0.0), Constant(2.0), lipschitz_c=2.0,
                    description="g = 1 strictly inside L = 0, U = 2"),
        ModelParams(1, (0.3,), (0.0,), 1.0),
        (0.0,),
    )

    K, pen = GAME_PUT_STRIKE, GAME_PUT_PENALTY
    out["game-put-1d"] = Fixture(
        "game-put-1d",
        ProblemSpec(zero, Put(K), Put(K), Put(K, offset=pen), lipschitz_c=3.0,
                    description=f"L = (K - x)^+, U = L + {pen}, g = L(T, .), K = {K}"),
        ModelParams(1, (0.3,), (0.1,), 0.5),
        (1.1,),
        {"strike": K, "penalty": pen},
    )

    out["symmetric-2d"] = Fixture(
        "symmetric-2d",
        ProblemSpec(LinearGenerator(y_coef=-0.1), Call(0.5), Call(0.5), Call(0.5, offset=0.5), lipschitz_c=2.0,
                    description="game call on the top rank: L = (x_(1) - 0.5)^+, U = L + 0.5, G = -0.1 y"),
        ModelParams(2, (1.0, 1.0), (0.0, 0.0), 1.0),
        (0.0, 0.0),
    )

    out["obstacle-2d"] = Fixture(
        "obstacle-2d",
        ProblemSpec(zero, Put(0.0, (0.0, 1.0)), Put(0.0, (0.0, 1.0)), Put(0.0, (0.0, 1.0), offset=0.3),
                    lipschitz_c=2.0,
                    description="game put on the bottom rank: L = (-x_(2))^+, U = L + 0.3, g = L(T, .)"),
        ModelParams(2, (0.6, 0.5), (0.05, 0.1), 0.5),
        (0.2, -0.2),
    )
    return out


def builtin_problems() -> Mapping[str, Fixture]:
    return _fixtures()


def lookup(name: str) -> Fixture:
    table = _fixtures()
    if name not in table:
        raise UnknownProblemError(f"unknown problem {name!r}; available: {', '.join(sorted(table))}")
    return table[name]
