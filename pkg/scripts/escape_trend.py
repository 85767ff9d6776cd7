"""Escape probability from the origin as the obstacle truncation grows."""
import argparse

from levyavoid import exponents as ex
from levyavoid import geometry as geo
from levyavoid import simulate as sim


def ladder(name, family, truncations, paths, seed):
    cfg = sim.SimConfig(paths=paths, seed=seed, R_esc=4 * truncations[-1])
    ests, ok = sim.escape_ladder(family, ex.brownian(), truncations, cfg)
    row = "  ".join(f"T={T:g}: {e.p_hat:.3f}+-{e.ci_half_width:.3f}" for T, e in zip(truncations, ests))
    print(f"{name:28s} {row}   nonincreasing={ok}")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    ladder("geometric 2^n, r=1", geo.GeometricFamily(), [64.0, 128.0, 256.0, 512.0], args.paths, args.seed)
    lattice = geo.LatticeFamily(3, geo.power_law(1.0, 0.05), min_norm=2.0)
    ladder("lattice r=0.05|x|^-1", lattice, [4.0, 8.0, 16.0, 32.0], args.paths, args.seed)


if __name__ == "__main__":
    main()
