"""Z-learning accuracy on the 5-state, T = 8 benchmark across step-size constants and replay orders.

Usage: python3 scripts/zlearn_sweep.py [--seeds 20] [--samples 100000] [--c 1 2 5 20 100]
"""

import argparse

import numpy as np

from tclmdp.lsmdp import UtilitySchedule, solve_backward
from tclmdp.zlearning import LearningSchedule, max_relative_error, passive_samples, z_learn


def benchmark(seed, n=5, T=8):
    rng = np.random.default_rng(seed)
    Pb = rng.dirichlet(np.ones(n), size=n).T
    return Pb, UtilitySchedule(rng.uniform(-1, 1, (T, n)), 1.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--c", type=float, nargs="+", default=[1.0, 2.0, 5.0, 20.0, 100.0])
    args = ap.parse_args()
    print("order     c        mean_err  max_err")
    for order in ("stream", "backward"):
        for c in args.c:
            errs = []
            for s in range(args.seeds):
                Pb, sched = benchmark(s)
                des, _ = solve_backward(Pb, sched)
                res = z_learn(passive_samples(Pb, 8, args.samples, seed=10_000 + s), sched,
                              LearningSchedule(c=c), order=order)
                errs.append(max_relative_error(res.desirability.z, des.z))
            print(f"{order:9s} {c:<8g} {np.mean(errs):.4f}    {np.max(errs):.4f}")


if __name__ == "__main__":
    main()
