"""Monte Carlo hitting and overshoot estimates against closed forms."""
import argparse

import numpy as np
from scipy import special

from levyavoid import exponents as ex
from levyavoid import simulate as sim


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    cfg = sim.SimConfig(paths=args.paths, seed=args.seed, threads=args.threads)
    ball = (np.zeros(3), 1.0)

    est = sim.estimate_single_ball_hit(ex.brownian(), [2, 0, 0], ball, cfg)
    print(f"brownian |x|=2 R=8   p={est.p_hat:.4f} +- {est.ci_half_width:.4f}   exact {3 / 7:.4f}")
    for beta in (0.8, 1.0, 1.5):
        est = sim.estimate_single_ball_hit(ex.stable(beta), [3, 0, 0], ball, cfg)
        exact = special.betainc((3 - beta) / 2, beta / 2, 1 / 9)
        print(f"stable({beta}) |x|=3   p_inf={est.p_extrapolated:.4f} +- {est.ci_extrapolated:.4f}"
              f"   exact {exact:.4f}")
    for beta in (0.8, 1.2, 1.6):
        est = sim.estimate_overshoot(ex.stable(beta), 1.0, [2, 4, 8, 16, 32, 64], cfg)
        print(f"overshoot stable({beta})   exponent {est.exponent:.3f}")


if __name__ == "__main__":
    main()
