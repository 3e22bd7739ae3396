"""Experiment configs: YAML documents checked against a published JSON schema before any compute."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .bsde import MonteCarloConfig
from .forms import form_from_config, generator_from_config
from .model import ModelParams, ProblemSpec, lookup, validate_params
from .regression import RegressionBasis

COMMANDS = ("simulate", "solve-bsde", "solve-pde", "compare", "dynkin", "price")

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_FORM = {"oneOf": [_NUM, {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rankgame experiment",
    "type": "object",
    "required": ["problem"],
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "problem": {"oneOf": [
            {"type": "string"},
            {"type": "object", "required": ["terminal", "lower", "upper"], "additionalProperties": False,
             "properties": {"generator": {"type": ["object", "string"]}, "terminal": _FORM, "lower": _FORM,
                            "upper": _FORM, "lipschitz_c": _NUM, "description": {"type": "string"}}},
        ]},
        "model": {"type": "object", "required": ["n", "sigma", "delta", "T"], "additionalProperties": False,
                  "properties": {"n": {"type": "integer", "minimum": 1}, "sigma": _VEC, "delta": _VEC, "T": _NUM}},
        "x0": _VEC,
        "market": {"type": "object", "required": ["r0", "p0hat"], "additionalProperties": False,
                   "properties": {"r0": _NUM, "p0hat": _VEC}},
        "query_points": {"type": "array", "items": {"type": "array", "prefixItems": [_NUM, _VEC],
                                                    "minItems": 2, "maxItems": 2}},
        "numerics": {"type": "object", "additionalProperties": False, "properties": {
            "paths": {"type": "integer", "minimum": 2},
            "steps": {"type": "integer", "minimum": 1},
            "dt": {"type": "number", "exclusiveMinimum": 0},
            "basis": {"type": "object", "additionalProperties": False, "properties": {
                "degree": {"type": "integer", "minimum": 0},
                "kind": {"enum": list(RegressionBasis.KINDS)},
                "knots": {"type": "integer", "minimum": 0},
                "include_barrier_features": {"type": "boolean"}}},
            "penalties": {"type": "array", "items": {"type": "number", "minimum": 0}},
            "h": {"type": "number", "exclusiveMinimum": 0},
            "fd_dt": {"type": "number", "exclusiveMinimum": 0},
            "bounds": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
            "alpha": {"type": "number", "minimum": 0},
            "c_disc": {"type": "number", "minimum": 0},
            "lattice_steps": {"type": "integer", "minimum": 1},
            "lattice_halfwidth": {"type": "number", "exclusiveMinimum": 0},
            "lattice_space_steps": {"type": "integer", "minimum": 2},
            "eps_hit": {"type": "number", "minimum": 0},
            "strategies": {"type": "integer", "minimum": 0},
            "slack_tolerance": {"type": "number", "minimum": 0},
            "dump_bundle": {"type": "boolean"},
        }},
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    spec: ProblemSpec
    params: ModelParams
    x0: tuple
    seed: int
    output_dir: str
    numerics: dict
    market: dict | None
    query_points: tuple
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def mc(self):
        num = self.numerics
        basis = RegressionBasis(**num["basis"]) if "basis" in num else MonteCarloConfig().basis
        return MonteCarloConfig(paths=num.get("paths", 20000), steps=num.get("steps"), dt=num.get("dt"),
                                seed=self.seed, basis=basis)


def load_config(path, seed=None, output_dir=None, command=None) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw, seed=seed, output_dir=output_dir, command=command)


def parse_config(raw, seed=None, output_dir=None, command=None) -> ExperimentConfig:
    """Validate a raw mapping; ``command``, ``seed`` and ``output_dir`` override the document."""
    raw = copy.deepcopy(raw)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if command is not None:
        if raw.get("command", command) != command:
            raise ConfigError(f"config is for {raw['command']!r}, not {command!r}")
        raw["command"] = command
    if "command" not in raw:
        raise ConfigError("no command given")
    if seed is not None:
        raw["seed"] = int(seed)
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc

    fixture = None
    if isinstance(raw["problem"], str):
        try:
            fixture = lookup(raw["problem"])
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
        spec = fixture.spec
    else:
        p = raw["problem"]
        try:
            spec = ProblemSpec(generator_from_config(p.get("generator")), form_from_config(p["terminal"]),
                               form_from_config(p["lower"]), form_from_config(p["upper"]),
                               float(p.get("lipschitz_c", 2.0)), p.get("description", ""))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"problem forms: {exc}") from exc

    if "model" in raw:
        m = raw["model"]
        try:
            params = ModelParams(m["n"], tuple(m["sigma"]), tuple(m["delta"]), float(m["T"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif fixture is not None:
        params = fixture.params
    else:
        raise ConfigError("a 'model' section is required unless the problem names a fixture")
    report = validate_params(params)
    if not report.passed:
        raise ConfigError(f"model parameters fail validation:\n{report}")

    if "x0" in raw:
        x0 = tuple(float(v) for v in raw["x0"])
    elif fixture is not None and fixture.params == params:
        x0 = tuple(fixture.x0)
    else:
        x0 = (0.0,) * params.n
    if len(x0) != params.n or np.any(np.diff(x0) > 0):
        raise ConfigError(f"x0={list(x0)} must have length n={params.n} and be weakly decreasing")

    command = raw["command"]
    market = raw.get("market")
    if command == "price":
        if market is None:
            raise ConfigError("command 'price' needs a 'market' section")
        if len(market["p0hat"]) != params.n + 1 or min(market["p0hat"]) <= 0:
            raise ConfigError("market.p0hat must hold n+1 positive prices (bond first)")
    queries = tuple((float(t), tuple(float(v) for v in x)) for t, x in raw.get("query_points", []))
    for t, x in queries:
        if len(x) != params.n:
            raise ConfigError(f"query point {list(x)} has the wrong dimension")
    numerics = raw.get("numerics", {})
    if "basis" in numerics:
        b = RegressionBasis(**numerics["basis"])
        if b.size(params.n) > numerics.get("paths", 20000) / 10:
            raise ConfigError(f"basis of {b.size(params.n)} functions exceeds paths/10")
    if command in ("solve-pde", "compare") and params.n not in (1, 2):
        raise ConfigError("finite differences support n in (1, 2)")
    return ExperimentConfig(command, spec, params, x0, int(raw.get("seed", 0)), raw.get("output_dir", "out"),
                            numerics, market, queries, raw)
