"""Locate the integral-test threshold in gamma for phi(r) = r**-gamma.

    python scripts/threshold_sweep.py --beta 2 --beta 1.5 --beta 1.0
"""
import argparse

import numpy as np

from levyavoid import criteria as cr
from levyavoid import exponents as ex
from levyavoid import geometry as geo
from levyavoid import green as gr


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--beta", type=float, action="append", help="stability index, 2 for Brownian motion")
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--doublings", type=int, default=16)
    args = p.parse_args()
    sched = cr.Schedule(1.0, args.doublings)
    print("beta  expected  located  verdicts")
    for beta in args.beta or [2.0, 1.5, 1.0]:
        model = gr.GreenModel.exact(ex.stable(beta))
        target = beta / (3 - beta)
        grid = np.round(np.arange(max(target - 0.5, 0.05), target + 0.5001, args.step), 4)
        flip, table = cr.locate_threshold(
            grid, lambda g: cr.integral_criterion(geo.power_law(g), model, schedule=sched).classification)
        marks = "".join({"Diverges": "D", "Converges": "C"}.get(c, "?") for _, c in table)
        print(f"{beta:4.2f}  {target:8.3f}  {flip!s:>7}  {marks}")


if __name__ == "__main__":
    main()
