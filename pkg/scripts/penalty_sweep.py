"""Penalized solves of the game put against the date-monitored lattice, over several seeds.

    python scripts/penalty_sweep.py --paths 50000 --steps 250 --seeds 1 2 3
"""
import argparse
import math

from rankgame.bsde import MonteCarloConfig, solve_lattice_1d, solve_penalized, solve_reflected_lsmc
from rankgame.model import lookup
from rankgame.sde import TimeGrid, rank_paths, simulate_paths


def lattice_value(fx, grid, substeps=64):
    sig = fx.params.sigma[0]
    h = sig * math.sqrt(2 * grid.dt / substeps)
    k = int(math.ceil((4.5 * sig * math.sqrt(fx.params.horizon_T) + 0.5) / h))
    return solve_lattice_1d(fx.spec, fx.params, grid, k * h, k, fx.x0[0], substeps=substeps).value


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=50_000)
    ap.add_argument("--steps", type=int, default=250)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1])
    ap.add_argument("--penalties", type=float, nargs="+", default=[5.0, 50.0, 500.0])
    args = ap.parse_args()
    fx = lookup("game-put-1d")
    grid = TimeGrid(0.0, fx.params.horizon_T, args.steps)
    ref = lattice_value(fx, grid)
    print(f"lattice (reflected at the {args.steps} grid dates): {ref:.6f}")
    basis = MonteCarloConfig().basis
    for seed in args.seeds:
        dec = rank_paths(simulate_paths(fx.params, fx.x0, grid, args.paths, seed), fx.params)
        sol = solve_reflected_lsmc(fx.spec, dec, fx.params, basis)
        print(f"seed {seed} reflected {sol.y0:.6f} ({sol.y0 / ref - 1:+.2%}) se {sol.se:.1e}")
        for side in ("lower-reflected", "upper-reflected"):
            for pen in args.penalties:
                s = solve_penalized(fx.spec, dec, fx.params, basis, pen, side)
                print(f"  {side:16s} {pen:7g} {s.y0:.6f} ({s.y0 / ref - 1:+.2%}) se {s.se:.1e}")
                del s


if __name__ == "__main__":
    main()
