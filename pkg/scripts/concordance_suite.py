"""Series, psi-form, Whitney and annulus criteria on six reference families (Brownian motion in R^3)."""
import argparse
import time

from levyavoid import criteria as cr
from levyavoid import exponents as ex
from levyavoid import geometry as geo
from levyavoid import green as gr

FAMILIES = {
    "geometric 2^n, r=1": geo.GeometricFamily(),
    "shell q=0.5 a=0": geo.ShellFamily(8, 0.5, 0.0, 0.01, per_doubling=8),
    "shell q=1 a=0.5": geo.ShellFamily(8, 1.0, 0.5, 1e-4, per_doubling=8),
    "shell q=0.75 a=0.5": geo.ShellFamily(8, 0.75, 0.5, 1e-3, per_doubling=8),
    "shell q=1 a=0": geo.ShellFamily(8, 1.0, 0.0, 0.002, per_doubling=8),
    "shell q=0.5 a=0.5": geo.ShellFamily(8, 0.5, 0.5, 0.002, per_doubling=8),
}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--doublings", type=int, default=12)
    args = p.parse_args()
    model, exp = gr.GreenModel.exact(ex.brownian()), ex.brownian()
    sched = cr.Schedule(1.0, args.doublings)
    header = ["series", "psi_form", "whitney", "annuli(2)", "annuli(3)", "annuli(5)"]
    print(f"{'family':22s} " + " ".join(f"{h:>13s}" for h in header) + "   seconds")
    for name, fam in FAMILIES.items():
        t0 = time.perf_counter()
        out = [cr.series_criterion(fam, model, sched), cr.psi_form_criterion(fam, exp, sched),
               cr.wiener_whitney_sum(fam, model, sched)]
        out += [cr.wiener_annuli_sum(fam, model, lam, sched) for lam in (2, 3, 5)]
        print(f"{name:22s} " + " ".join(f"{v.classification:>13s}" for v in out)
              + f"   {time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
