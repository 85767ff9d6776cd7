"""Percolation integral against the expected Whitney sum on a (gamma, s) grid, Stable(1.5) in R^3."""
import argparse

from levyavoid import criteria as cr
from levyavoid import exponents as ex
from levyavoid import geometry as geo
from levyavoid import green as gr
from levyavoid import poisson as po


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=100)
    args = p.parse_args()
    model = gr.GreenModel.exact(ex.stable(1.5))
    sched = cr.Schedule(1.0, 24)
    print("gamma    s   percolation    expected_wiener  growth")
    for gamma in (0.5, 1.0, 1.5):
        for s in (0.0, 0.5, 1.0):
            m = po.IntensityModel.power_law(gamma, s)
            a = po.percolation_integral(m, model, sched)
            b = po.expected_wiener_sum(m, model, sched)
            print(f"{gamma:5.2f} {s:4.1f}   {a.classification:13s}  {b.classification:15s}  {a.growth_exponent:+.3f}")
    m = po.IntensityModel.power_law(1.0, 1.0)
    cubes = [geo.WhitneyCube(j, (1, 0, 0)) for j in (2, 3, 4)]
    ests, spread = po.capacity_constant_stability(m, model, cubes, seeds=args.seeds)
    for e in ests:
        print(f"generation {e.cube.j}: lower {e.lower:.3f}  upper {e.upper:.3f}  reference {e.reference:.3f}"
              f"  C4 {e.C4:.3f}")
    print(f"C4 spread {spread:.3f}")


if __name__ == "__main__":
    main()
