"""Compare the one-pass start search with exhaustive rotation on tiny closed paths.

Counts instances where some rotation beats the baseline but the search reports
no improvement, and checks that no rotation ever gains more than one break.
"""
import argparse

import numpy as np

from redres.dp_planner import LossParams
from redres.kinematics import default_model
from redres.sim_validator import random_tiny_instance
from redres.start_optimizer import optimize_start, rotation_oracle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    limits = default_model().limits
    missed, found, lemma_ok = [], 0, True
    for k in range(args.trials):
        g = random_tiny_instance(np.random.default_rng([args.seed, k]), limits, circular=True)
        lp = LossParams.auto(g.n, limits, g.t0)
        res = optimize_start(g, limits, lp)
        best, arg = rotation_oracle(g, limits, lp)
        lemma_ok &= best >= res.baseline_breaks - 1
        found += res.improved
        if best < res.baseline_breaks and not res.improved:
            missed.append((k, res.baseline_breaks, best, arg))
    print(f"trials={args.trials} improved={found} missed={len(missed)} lemma_holds={lemma_ok}")
    for k, b0, best, arg in missed:
        print(f"  trial={k} baseline={b0} best_rotation={best} at start={arg}")


if __name__ == "__main__":
    main()
