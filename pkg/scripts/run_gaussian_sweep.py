"""Rho sweep on the two-group Gaussian mean scenario for GLP, SLP and RW.

Writes the per-run trajectories, ``summary.csv`` (terminal disparities per
rho) and ``series.csv`` (seed mean and standard error per round), then prints
whether loss disparity falls with rho for each mechanism.

    python3 scripts/run_gaussian_sweep.py [--scenario gaussian_mean] [--out sweeps/gaussian_mean] [--full]
"""
import argparse
import csv
from pathlib import Path

from fairps.cli import main


def check_monotone(summary: Path, tol: float = 1e-6) -> dict:
    by_mech = {}
    with summary.open() as fh:
        for row in csv.DictReader(fh):
            by_mech.setdefault(row["mechanism"], []).append(float(row["loss_disparity_ps"]))
    return {m: all(b <= a + tol for a, b in zip(v, v[1:])) for m, v in by_mech.items()}


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", default="gaussian_mean")
    parser.add_argument("--rho", default="0,0.1,0.3,0.5,0.7,1.0")
    parser.add_argument("--out", default=None)
    parser.add_argument("--parallel", type=int, default=1)
    parser.add_argument("--full", action="store_true")
    args = parser.parse_args(argv)
    out = Path(args.out or f"sweeps/{args.scenario}")
    cli_args = ["sweep", args.scenario, "--rho", args.rho, "--out", str(out), "--parallel", str(args.parallel)]
    if args.full:
        cli_args.append("--full")
    code = main(cli_args)
    for mech, ok in check_monotone(out / "summary.csv").items():
        print(f"{mech}: loss disparity {'non-increasing' if ok else 'NOT monotone'} in rho")
    return code


if __name__ == "__main__":
    raise SystemExit(run())
