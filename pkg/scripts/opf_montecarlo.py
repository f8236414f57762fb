"""Chance-constrained OPF on the four-bus feeder: violation rates versus the risk budget.

Usage: python3 scripts/opf_montecarlo.py [--draws 10000] [--seed 0]
"""

import argparse

import numpy as np

from tclmdp.gridopf import Coupling, UncertainInjection, four_bus_feeder, solve_ccopf, voltage_violation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--draws", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    net = four_bus_feeder()
    cp = Coupling((2, 3), [0.0, 0.0], [600.0, 600.0])
    sigma = [0.0, 20.0, 40.0, 40.0]
    print("eps    objective     per_limit  any_limit  binding")
    for eps in (0.01, 0.02, 0.05, 0.1, 0.2):
        unc = UncertainInjection(sigma, eps)
        dec = solve_ccopf(net, unc, 0, cp, tariff=1.0, prox=0.01, ref_p=[600.0, 600.0])
        per, any_v = voltage_violation(net, unc, dec, args.draws, seed=args.seed)
        print(f"{eps:<6g} {dec.objective:<13.4f} {per.max():<10.4f} {any_v:<10.4f} {bool(np.any(dec.binding))}")


if __name__ == "__main__":
    main()
