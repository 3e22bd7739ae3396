"""Run every YAML file in configs/ through the CLI and summarize exit codes.

    python scripts/run_configs.py [--out runs] [--only price]
"""
import argparse
import subprocess
import sys
import time
from pathlib import Path

import yaml

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs")
    ap.add_argument("--only", default=None, help="substring filter on config names")
    args = ap.parse_args()
    worst = 0
    for cfg in sorted((ROOT / "configs").glob("*.yaml")):
        if args.only and args.only not in cfg.stem:
            continue
        command = yaml.safe_load(cfg.read_text())["command"]
        start = time.perf_counter()
        proc = subprocess.run([sys.executable, "-m", "rankgame.cli", command, "--config", str(cfg),
                               "--out", str(Path(args.out) / cfg.stem)], capture_output=True, text=True)
        print(f"{cfg.stem:28s} exit {proc.returncode}  {time.perf_counter() - start:6.1f}s")
        if proc.returncode:
            print((proc.stdout + proc.stderr).rstrip())
        worst = max(worst, proc.returncode)
    return worst


if __name__ == "__main__":
    sys.exit(main())
