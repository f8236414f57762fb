"""Compare the coordinated two-bus dispatch with an exhaustive grid over ensemble distributions.

Usage: python3 scripts/coordinator_oracle.py [--tariff 0.05] [--load 440]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import joint_bruteforce, two_bus_config  # noqa: E402

from tclmdp.coordinator import run  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tariff", type=float, default=0.05)
    ap.add_argument("--load", type=float, default=440.0)
    ap.add_argument("--delta", type=float, default=0.01)
    args = ap.parse_args()
    cfg = two_bus_config(load_kw=args.load, tariff=args.tariff, delta=args.delta)
    rep = run(cfg)
    print(f"converged={rep.converged} iterations={rep.iterations} residual={rep.primal_residual:.2e}")
    print(f"coordinated objective {rep.objective:.6f}")
    best = joint_bruteforce(cfg)
    print(f"grid optimum          {best:.6f}  gap {100 * abs(rep.objective - best) / abs(best):.4f}%")


if __name__ == "__main__":
    main()
