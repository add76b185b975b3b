"""Reproduce the two failure modes of the baselines and a finite-sample comparison.

1. The group-loss-variance objective on the three-point regression data has
   negative curvature near theta = 1.
2. Repeated chi-square DRO on the affine-fraction scenario cycles between
   theta = 0.2 and theta = -0.2 forever.
3. On Gaussian mean estimation, GLV and GLP at rho = 0.5 are run both with
   exact group distributions and with 1000 fresh samples per round, to show
   that exact dynamics converge for both and sampling noise stalls both.

    python3 scripts/counterexamples.py [--out counterexamples] [--samples 1000]
"""
import argparse

import numpy as np

from fairps.cli import main
from fairps.dynamics import fair_rerm, fair_rrm
from fairps.losses import FairMechanism
from fairps.scenarios import build_problem, load_scenario


def finite_sample_comparison(n: int, rho: float = 0.5, seed: int = 0, rounds: int = 200):
    cfg = load_scenario("glv_gaussian_mean")
    problem = build_problem(cfg, seed)
    for kind in ("glv", "glp"):
        mech = FairMechanism(kind, rho)
        exact = fair_rrm(problem, mech, tau=cfg.tau, max_rounds=rounds)
        sampled = fair_rerm(problem, mech, lambda t: n, seed, cfg.tau, rounds)
        tail = np.mean([p.step_norm for p in sampled.points[-20:]])
        print(f"{kind} rho={rho}: exact {exact.verdict}, theta {exact.final.theta[0]:.6f}; "
              f"n={n} per round {sampled.verdict}, mean step over last 20 rounds {tail:.2e}")


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="counterexamples")
    parser.add_argument("--samples", type=int, default=1000)
    args = parser.parse_args(argv)
    code = main(["counterexamples", "--out", args.out])
    finite_sample_comparison(args.samples)
    return code


if __name__ == "__main__":
    raise SystemExit(run())
