"""Closed catalog of parameterized barrier/terminal/generator forms.

Every form is vectorized: ``x`` has shape ``(..., n)`` (ranked coordinates,
largest first) and ``t`` is a scalar or broadcasts against ``x[..., 0]``.
Configs name forms by ``kind``; no user code is ever executed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _weights(weights, x):
    w = np.asarray(weights if weights is not None else [1.0] + [0.0] * (x.shape[-1] - 1), dtype=float)
    if w.shape[0] != x.shape[-1]:
        raise ValueError(f"form weights have length {w.shape[0]}, state has dimension {x.shape[-1]}")
    return w


def _state(x, log_state):
    x = np.asarray(x, dtype=float)
    return np.exp(x) if log_state else x


@dataclass(frozen=True)
class Constant:
    value: float
    kind: str = field(default="constant", init=False)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.full(np.broadcast_shapes(np.shape(t), x.shape[:-1]), float(self.value))


@dataclass(frozen=True)
class Affine:
    """``const + time_coef * t + weights . x``."""

    weights: tuple
    const: float = 0.0
    time_coef: float = 0.0
    kind: str = field(default="affine", init=False)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.const + self.time_coef * np.asarray(t, dtype=float) + x @ _weights(self.weights, x)


@dataclass(frozen=True)
class Put:
    """``(strike - weights . s)^+ + offset`` with ``s = exp(x)`` when ``log_state``."""

    strike: float
    weights: tuple | None = None
    offset: float = 0.0
    log_state: bool = False
    kind: str = field(default="put", init=False)

    def __call__(self, t, x):
        s = _state(x, self.log_state)
        val = np.maximum(self.strike - s @ _weights(self.weights, s), 0.0) + self.offset
        return np.broadcast_to(val, np.broadcast_shapes(np.shape(t), val.shape)).copy()


@dataclass(frozen=True)
class Call:
    """``(weights . s - strike)^+ + offset``."""

    strike: float
    weights: tuple | None = None
    offset: float = 0.0
    log_state: bool = False
    kind: str = field(default="call", init=False)

    def __call__(self, t, x):
        s = _state(x, self.log_state)
        val = np.maximum(s @ _weights(self.weights, s) - self.strike, 0.0) + self.offset
        return np.broadcast_to(val, np.broadcast_shapes(np.shape(t), val.shape)).copy()


@dataclass(frozen=True)
class ClippedLinear:
    """``clip(const + weights . x, lo, hi)``."""

    weights: tuple
    const: float = 0.0
    lo: float = -np.inf
    hi: float = np.inf
    kind: str = field(default="clipped-linear", init=False)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        val = np.clip(self.const + x @ _weights(self.weights, x), self.lo, self.hi)
        return np.broadcast_to(val, np.broadcast_shapes(np.shape(t), val.shape)).copy()


@dataclass(frozen=True)
class LinearGenerator:
    """``G(t, x, y, z) = y_coef * y + z_coef . z + const``.

    ``z_coef`` may be empty (no dependence on the control).
    """

    y_coef: float = 0.0
    z_coef: tuple = ()
    const: float = 0.0
    kind: str = field(default="linear", init=False)

    def __call__(self, t, x, y, z):
        y = np.asarray(y, dtype=float)
        out = self.y_coef * y + self.const
        if len(self.z_coef):
            out = out + np.asarray(z, dtype=float) @ np.asarray(self.z_coef, dtype=float)
        return out

    @property
    def lipschitz(self):
        return max(abs(self.y_coef), float(np.linalg.norm(self.z_coef)) if len(self.z_coef) else 0.0)


FORM_KINDS = {
    "constant": Constant,
    "affine": Affine,
    "put": Put,
    "call": Call,
    "clipped-linear": ClippedLinear,
}


def form_from_config(cfg):
    """Build a form from a mapping such as ``{"kind": "put", "strike": 1.0}``."""
    if isinstance(cfg, (int, float)):
        return Constant(float(cfg))
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in FORM_KINDS:
        raise ValueError(f"unknown form kind {kind!r}; expected one of {sorted(FORM_KINDS)}")
    for key in ("weights",):
        if key in cfg and cfg[key] is not None:
            cfg[key] = tuple(float(v) for v in cfg[key])
    return FORM_KINDS[kind](**cfg)


def generator_from_config(cfg):
    if cfg is None or cfg == "zero":
        return LinearGenerator()
    cfg = dict(cfg)
    kind = cfg.pop("kind", "linear")
    if kind != "linear":
        raise ValueError(f"unknown generator kind {kind!r}; only 'linear' is supported")
    if "z_coef" in cfg:
        cfg["z_coef"] = tuple(float(v) for v in cfg["z_coef"])
    return LinearGenerator(**cfg)
