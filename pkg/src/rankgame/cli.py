"""Batch front-end: ``rankgame <command> --config <file> [--seed N] [--out DIR]``.

Exit status: 0 when every built-in check passes, 2 when a check fails,
1 on any error (bad config, numerical failure).  Configs are validated in
full before any computation or file creation.

Artifacts per command (CSV columns in order):

``simulate``
    ``ranked_terminal.csv``: path, x1..xn (ranked terminal slice, largest first);
    ``spread_stats.json``; ``paths.rksd`` when ``numerics.dump_bundle``.
``solve-bsde``
    ``bsde_summary.csv``: t, mean_y, mean_kplus, mean_kminus, lower_contact, upper_contact;
    ``diagnostics.json``; ``result.json`` (y0, SE, penalty sweep).
``solve-pde``
    ``pde_t0.csv``: x1..xn, u at the initial slice (wedge nodes only);
    ``pde_t0.rksd`` (nodes x 1 x (n+1): coordinates then u); ``residual.json``.
``compare``
    ``compare.csv``: t, x1..xn, u_fd, u_mc, se, u_lattice, tolerance, passed.
``dynkin``
    ``stopping.csv``: path, tau_index, lambda_index, payoff; ``dynkin.json``.
``price``
    ``paths.csv``: path, tau_hat, lambda_hat, payoff; ``price.json``.

Every run also writes ``manifest.json`` (schema version ``MANIFEST_VERSION``).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import math
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bsde import DomainError, StabilityError, solve_lattice_1d, solve_penalized, solve_reflected_lsmc, \
    skorokhod_residuals
from .config import COMMANDS, ConfigError, ExperimentConfig, load_config
from .game import (IDENTITY_RTOL, GamePayoffSpec, MeasureChangeError, dynkin_value, extract_hedge, extract_stopping_times,
                   option_payoff, dynkin_payoff, price_game_option, rank_identity_gap, replication_check,
                   sample_strategies, saddle_check)
from .io import dumps_json, fmt, sha256_file, write_bundle, write_csv, write_json
from .pde import FdConfig, auto_bounds, build_grid, compare_bsde_pde, complementarity_residual, solve_obstacle_fd, \
    stability_ratio
from .sde import TimeGrid, rank_paths, simulate_paths, spread_stats

MANIFEST_VERSION = 1
EXIT_PASS, EXIT_ERROR, EXIT_CHECK_FAIL = 0, 1, 2


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float


@dataclass
class RunManifest:
    command: str
    config: dict
    artifacts: list = field(default_factory=list)  # [{"file", "sha256", "bytes"}]
    checks: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    library_version: str = __version__
    schema_version: int = MANIFEST_VERSION

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "library_version": self.library_version,
            "command": self.command,
            "config": self.config,
            "artifacts": self.artifacts,
            "checks": [{"name": c.name, "passed": c.passed, "value": c.value, "threshold": c.threshold}
                       for c in self.checks],
            "passed": self.passed,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


class ManifestError(ValueError):
    pass


def verify_manifest(path):
    """Recompute artifact digests next to ``manifest.json``; raise on mismatch."""
    import json

    path = Path(path)
    data = json.loads(path.read_text())
    for art in data["artifacts"]:
        digest = sha256_file(path.parent / art["file"])
        if digest != art["sha256"]:
            raise ManifestError(f"{art['file']}: digest {digest} != recorded {art['sha256']}")
    return data


def emit_report(manifest: RunManifest, fmt_: str, out_dir) -> list:
    """Write the manifest as ``report.json`` or ``report.csv`` (one row per artifact and check)."""
    out = Path(out_dir)
    if not out.is_dir():
        raise OSError(f"output directory {out} does not exist")
    if fmt_ == "json":
        path = out / "report.json"
        path.write_text(dumps_json(manifest.to_dict()))
    elif fmt_ == "csv":
        path = out / "report.csv"
        rows = [("meta", k, str(v), "") for k, v in (("schema_version", manifest.schema_version),
                                                        ("library_version", manifest.library_version),
                                                        ("command", manifest.command),
                                                        ("passed", fmt(manifest.passed)))]
        rows += [("artifact", a["file"], a["sha256"], fmt(a["bytes"])) for a in manifest.artifacts]
        rows += [("check", c.name, fmt(c.passed), fmt(c.value)) for c in manifest.checks]
        write_csv(path, ("section", "name", "value", "detail"), rows)
    else:
        raise ValueError(f"format must be 'csv' or 'json', got {fmt_!r}")
    return [path]


# ---------------------------------------------------------------------------
# pipelines; each writes into ``out`` and returns a list of CheckResult

def _grid(cfg: ExperimentConfig):
    T = cfg.params.horizon_T
    return TimeGrid(0.0, T, cfg.mc.steps_for(T))


def _solve(cfg):
    bundle = simulate_paths(cfg.params, cfg.x0, _grid(cfg), cfg.mc.paths, cfg.seed)
    dec = rank_paths(bundle, cfg.params)
    return dec, solve_reflected_lsmc(cfg.spec, dec, cfg.params, cfg.mc.basis)


def _reflection_checks(sol):
    """Sandwich, Skorokhod and no-simultaneous-push checks on a two-sided solution."""
    below = float(np.max(sol.lower - sol.y, initial=0.0))
    above = float(np.max(sol.y - sol.upper, initial=0.0))
    sk = skorokhod_residuals(sol)
    both = float(np.max(np.abs(sol.dkplus * sol.dkminus), initial=0.0))
    return [
        CheckResult("sandwich", below == 0.0 and above == 0.0, max(below, above), 0.0),
        CheckResult("skorokhod_lower", sk[0] == 0.0, sk[0], 0.0),
        CheckResult("skorokhod_upper", sk[1] == 0.0, sk[1], 0.0),
        CheckResult("no_simultaneous_push", both == 0.0, both, 0.0),
    ]


def run_simulate(cfg, out):
    bundle = simulate_paths(cfg.params, cfg.x0, _grid(cfg), cfg.mc.paths, cfg.seed)
    dec = rank_paths(bundle, cfg.params)
    n = cfg.params.n
    term = dec.ranked[:, -1]
    write_csv(out / "ranked_terminal.csv", ["path"] + [f"x{i + 1}" for i in range(n)],
              ([i, *row] for i, row in enumerate(term.tolist())))
    st = spread_stats(dec)
    write_json(out / "spread_stats.json", {
        "paths": st.m_paths, "mean_spread": st.mean_spread, "se_spread": st.se_spread,
        "var_spread": st.var_spread, "mean_local_time": st.mean_lambda, "se_local_time": st.se_lambda,
        "var_local_time": st.var_lambda, "floored": dec.floored})
    if cfg.numerics.get("dump_bundle", False):
        write_bundle(out / "paths.rksd", dec.ranked)
    violations = int(np.sum(np.diff(dec.ranked, axis=2) > 0))
    resid = float(np.max(np.abs(dec.residual), initial=0.0))
    return [CheckResult("ordering_violations", violations == 0, violations, 0),
            CheckResult("telescoping_residual", resid <= 1e-12, resid, 1e-12)]


def run_solve_bsde(cfg, out):
    dec, sol = _solve(cfg)
    times = sol.grid.times
    low_hit = np.isclose(sol.y, sol.lower, rtol=0, atol=1e-12)
    up_hit = np.isclose(sol.y, sol.upper, rtol=0, atol=1e-12)
    write_csv(out / "bsde_summary.csv",
              ("t", "mean_y", "mean_kplus", "mean_kminus", "lower_contact", "upper_contact"),
              zip(times, sol.y.mean(0), sol.kplus.mean(0), sol.kminus.mean(0), low_hit.mean(0), up_hit.mean(0)))
    write_json(out / "diagnostics.json", sol.diagnostics)
    checks = _reflection_checks(sol)
    sweep = []
    penalties = cfg.numerics.get("penalties", [])
    for side in ("lower-reflected", "upper-reflected"):
        vals = []
        for p in penalties:
            ps = solve_penalized(cfg.spec, dec, cfg.params, cfg.mc.basis, p, side)
            vals.append((p, ps.y0, ps.se))
            sweep.append({"side": side, "penalty": p, "y0": ps.y0, "se": ps.se})
        sign = -1.0 if side == "lower-reflected" else 1.0  # lower-reflected values fall with the penalty
        worst = min((sign * (b[1] - a[1]) + 2 * math.hypot(a[2], b[2]) for a, b in zip(vals, vals[1:])),
                    default=0.0)
        if len(vals) > 1:
            checks.append(CheckResult(f"{side}_monotone", worst >= 0, worst, 0.0))
    write_json(out / "result.json", {"y0": sol.y0, "se": sol.se, "paths": cfg.mc.paths,
                                     "steps": sol.grid.steps, "penalty_sweep": sweep})
    return checks


def _fd_settings(cfg, points):
    num = cfg.numerics
    h = num.get("h", 0.05)
    fd = FdConfig(h=h, dt=num.get("fd_dt", 1e-3), bounds=tuple(num["bounds"]) if "bounds" in num else None,
                  alpha=num.get("alpha", 0.0), c_disc=num.get("c_disc", 1.0))
    if fd.bounds is None:
        fd = FdConfig(fd.h, fd.dt, auto_bounds(cfg.params, points, h), fd.alpha, fd.c_disc)
    return fd


def _fd_preflight(cfg, fd):
    grid = build_grid(cfg.params, fd.bounds, fd.h, fd.alpha)
    T = cfg.params.horizon_T
    tg = TimeGrid(0.0, T, max(1, int(round(T / fd.dt))))
    ratio = stability_ratio(cfg.params, grid, tg)
    if ratio > 1.0 / (2 * cfg.params.n):
        raise ConfigError(f"explicit scheme unstable: sigma^2 dt/h^2 = {ratio:.4g} > 1/(2n)")
    return grid, tg


def run_solve_pde(cfg, out, prepared):
    grid, tg = prepared
    sol = solve_obstacle_fd(cfg.spec, cfg.params, grid, tg)
    n = cfg.params.n
    nodes = grid.nodes
    u0 = sol.u[0][grid.mask]
    write_csv(out / "pde_t0.csv", [f"x{i + 1}" for i in range(n)] + ["u"],
              ([*x, v] for x, v in zip(nodes.tolist(), u0.tolist())))
    write_bundle(out / "pde_t0.rksd", np.column_stack([nodes, u0])[:, None, :])
    rep = complementarity_residual(sol, cfg.spec, cfg.params)
    write_json(out / "residual.json", {"max_abs": rep.max_abs, "identity_gap": rep.identity_gap,
                                       "h": grid.h, "dt": tg.dt, "bounds": list(grid.bounds)})
    lo = np.stack([cfg.spec.lower(t, nodes) for t in tg.times])
    up = np.stack([cfg.spec.upper(t, nodes) for t in tg.times])
    u = sol.u[:, grid.mask]
    viol = float(max(np.max(lo - u, initial=0.0), np.max(u - up, initial=0.0)))
    return [CheckResult("sandwich", viol == 0.0, viol, 0.0),
            CheckResult("min_max_identity", rep.identity_gap <= 1e-15, rep.identity_gap, 1e-15)]


def _lattice_for(cfg, points):
    num = cfg.numerics
    p = cfg.params
    T = p.horizon_T
    steps = num.get("lattice_steps", 2000)
    tg = TimeGrid(0.0, T, steps)
    x0 = cfg.x0[0]
    sig, dlt = p.sigma[0], p.delta[0]
    reach = 4.0 * sig * math.sqrt(T) + abs(dlt) * T
    spread = max(abs(x[0] - x0) for _, x in points)
    half = num.get("lattice_halfwidth", reach + spread + 0.1)
    h_target = sig * math.sqrt(2.0 * tg.dt)  # sigma^2 dt / h^2 = 1/2
    space_steps = num.get("lattice_space_steps", int(math.ceil(half / h_target)))
    for t, _ in points:
        if abs(t / tg.dt - round(t / tg.dt)) > 1e-9:
            raise ConfigError(f"query time {t} is not on the lattice grid (dt={tg.dt:g})")
    return tg, half, space_steps


def run_compare(cfg, out, prepared):
    fd_cfg, lattice = prepared
    rows = compare_bsde_pde(cfg.spec, cfg.params, cfg.query_points, cfg.mc, fd_cfg)
    lat_vals = [math.nan] * len(rows)
    if lattice is not None:
        tg, half, steps = lattice
        lat = solve_lattice_1d(cfg.spec, cfg.params, tg, half, steps, cfg.x0[0])
        lat_vals = [lat.value_at(r.x[0], int(round(r.t / tg.dt))) for r in rows]
    n = cfg.params.n
    checks = []
    table = []
    for i, (r, ul) in enumerate(zip(rows, lat_vals)):
        ok = r.passed
        if not math.isnan(ul):
            fd_tol = fd_cfg.c_disc * (fd_cfg.h**2 + fd_cfg.dt)
            ok_lat = abs(ul - r.u_mc) <= r.tolerance and abs(ul - r.u_fd) <= fd_tol
            checks.append(CheckResult(f"lattice_point_{i}", ok_lat, abs(ul - r.u_fd), fd_tol))
        checks.append(CheckResult(f"fd_mc_point_{i}", ok, abs(r.u_fd - r.u_mc), r.tolerance))
        table.append([r.t, *r.x, r.u_fd, r.u_mc, r.se, ul, r.tolerance, fmt(r.passed)])
    write_csv(out / "compare.csv",
              ["t"] + [f"x{i + 1}" for i in range(n)] + ["u_fd", "u_mc", "se", "u_lattice", "tolerance", "passed"],
              table)
    return checks


def _strategies(cfg, sol, dec):
    m = cfg.numerics.get("strategies", 12)
    hold = sample_strategies(sol, "holder", m, seed=cfg.seed + 1, state=dec.ranked)
    write = sample_strategies(sol, "writer", m, seed=cfg.seed + 2, state=dec.ranked)
    return hold, write


def run_dynkin(cfg, out):
    dec, sol = _solve(cfg)
    rule = extract_stopping_times(sol, cfg.spec, cfg.numerics.get("eps_hit"))
    hold, write = _strategies(cfg, sol, dec)
    rep = saddle_check(sol, rule, hold, write)
    payoff = dynkin_payoff(sol, rule.lambda_hat, rule.tau_hat)
    write_csv(out / "stopping.csv", ("path", "tau_index", "lambda_index", "payoff"),
              zip(range(payoff.size), rule.tau_hat.tolist(), rule.lambda_hat.tolist(), payoff.tolist()))
    gv = dynkin_value(sol)
    write_json(out / "dynkin.json", {
        "value": gv.value, "se": gv.se, "realized": rep.realized, "realized_se": rep.realized_se,
        "worst_holder_margin": rep.worst_holder_margin, "worst_writer_margin": rep.worst_writer_margin,
        "alternatives": [{"side": r.side, "name": r.name, "mean": r.mean, "se": r.se, "margin": r.margin}
                         for r in rep.rows]})
    return _reflection_checks(sol) + [
        CheckResult("realized_value", rep.realized_ok, abs(rep.realized - rep.value), 3 * rep.realized_se),
        CheckResult("holder_deviations", rep.worst_holder_margin >= 0, rep.worst_holder_margin, 0.0),
        CheckResult("writer_deviations", rep.worst_writer_margin >= 0, rep.worst_writer_margin, 0.0),
    ]


def _inputs(cfg):
    # the output location is not part of the result, so artifacts stay identical across --out
    return {k: v for k, v in cfg.raw.items() if k != "output_dir"}


def run_price(cfg, out):
    market_cfg = cfg.market
    payoff = GamePayoffSpec.from_problem(cfg.spec)
    try:
        res = price_game_option(cfg.params, market_cfg["r0"], market_cfg["p0hat"], payoff, cfg.mc)
    except MeasureChangeError as exc:
        write_json(out / "price.json", {"inputs": _inputs(cfg), "error": str(exc)})
        return [CheckResult("martingale_gate", False, math.nan, 3.0)]
    sol, market = res.solution, res.market
    rule = extract_stopping_times(sol, res.problem, cfg.numerics.get("eps_hit"))
    hold, write = _strategies(cfg, sol, market.log_ranked)
    saddle = saddle_check(sol, rule, hold, write)
    hedge = extract_hedge(sol, market, rule, market.r0)
    rep = replication_check(hedge, sol, market, rule, cfg.numerics.get("slack_tolerance"))
    gap = rank_identity_gap(hedge, market)
    rel_gap = rank_identity_gap(hedge, market, relative=True)
    s = np.minimum(rule.tau_hat, rule.lambda_hat)
    growth = np.exp(market.r0 * sol.grid.times)
    realized = option_payoff(sol, rule.lambda_hat, rule.tau_hat) * growth[s]
    write_csv(out / "paths.csv", ("path", "tau_hat", "lambda_hat", "payoff"),
              zip(range(realized.size), sol.grid.times[rule.tau_hat], sol.grid.times[rule.lambda_hat],
                  realized.tolist()))
    gate = res.martingale
    write_json(out / "price.json", {
        "inputs": _inputs(cfg),
        "price": res.price, "se": res.se,
        "martingale": {"means": gate.means, "se": gate.se, "target": gate.target},
        "saddle": {"realized": saddle.realized, "realized_se": saddle.realized_se,
                   "worst_holder_margin": saddle.worst_holder_margin,
                   "worst_writer_margin": saddle.worst_writer_margin},
        "replication": {"min_slack": rep.min_slack, "violating_fraction": rep.violating_fraction,
                        "tolerance": rep.tolerance, "terminal_rel_error": rep.terminal_rel_error,
                        "pairs": rep.pairs, "rank_identity_gap": gap,
                        "rank_identity_relative_gap": rel_gap}})
    return _reflection_checks(sol) + [
        CheckResult("martingale_gate", True, float(np.max(np.abs(gate.means - gate.target) / gate.se)), 3.0),
        CheckResult("replication_violations", rep.violating_fraction < 0.01, rep.violating_fraction, 0.01),
        CheckResult("rank_identity", rel_gap <= IDENTITY_RTOL, rel_gap, IDENTITY_RTOL),
    ]


def _prepare(cfg: ExperimentConfig):
    """Command-specific precondition checks; returns whatever the pipeline needs."""
    penalties = cfg.numerics.get("penalties", [])
    if penalties:
        dt = _grid(cfg).dt
        if max(penalties) * dt > 1.0:
            raise ConfigError(f"penalty*dt = {max(penalties) * dt:.4g} > 1; refine the time grid")
    if cfg.command == "solve-pde":
        x0 = [(0.0, cfg.x0)]
        return _fd_preflight(cfg, _fd_settings(cfg, x0))
    if cfg.command == "compare":
        if not cfg.query_points:
            raise ConfigError("command 'compare' needs query_points")
        fd = _fd_settings(cfg, cfg.query_points)
        _fd_preflight(cfg, fd)
        lattice = _lattice_for(cfg, cfg.query_points) if cfg.params.n == 1 else None
        return fd, lattice
    return None


PIPELINES = {
    "simulate": run_simulate,
    "solve-bsde": run_solve_bsde,
    "solve-pde": run_solve_pde,
    "compare": run_compare,
    "dynkin": run_dynkin,
    "price": run_price,
}


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Run one pipeline; artifacts appear in ``cfg.output_dir`` only if the run completes."""
    prepared = _prepare(cfg)
    out = Path(cfg.output_dir)
    start = time.perf_counter()
    staging = Path(tempfile.mkdtemp(prefix=".rankgame-", dir=out.parent if out.parent.exists() else None))
    try:
        fn = PIPELINES[cfg.command]
        checks = fn(cfg, staging, prepared) if cfg.command in ("solve-pde", "compare") else fn(cfg, staging)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = []
        for f in sorted(staging.iterdir()):
            shutil.move(str(f), out / f.name)
            artifacts.append({"file": f.name, "sha256": sha256_file(out / f.name), "bytes": (out / f.name).stat().st_size})
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    manifest = RunManifest(cfg.command, cfg.raw, artifacts, checks, time.perf_counter() - start)
    write_json(out / "manifest.json", manifest.to_dict())
    return manifest


def build_parser():
    ap = argparse.ArgumentParser(prog="rankgame", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML experiment config")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--out", default=None, help="override the config output_dir")
    ap.add_argument("--report", choices=("json", "csv"), default=None, help="also emit a report file")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out, command=args.command)
        manifest = run_experiment(cfg)
        if args.report:
            emit_report(manifest, args.report, cfg.output_dir)
    except (ConfigError, DomainError, StabilityError, ValueError, ArithmeticError, OSError) as exc:
        print(f"rankgame {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for c in manifest.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={c.value:.6g} threshold={c.threshold:.6g}")
    print(f"{_dt.timedelta(seconds=round(manifest.wall_clock_seconds))} {cfg.output_dir}")
    return EXIT_PASS if manifest.passed else EXIT_CHECK_FAIL


if __name__ == "__main__":
    sys.exit(main())
