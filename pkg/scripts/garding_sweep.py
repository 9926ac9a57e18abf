"""Discrete Garding constant C for b = s (x1, x2) as the divergence 2s grows."""
import argparse

from convopt.mesh import DiffusionTensor, RectDomain, VectorCoefficient, build_grid
from convopt.verification import garding_diagnostic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nx", type=int, nargs="+", default=[8, 16])
    ap.add_argument("--strengths", type=float, nargs="+", default=[0, 2, 5, 8, 10, 15, 20, 40])
    args = ap.parse_args()
    print(f"{'nx':>4s} {'s':>6s} {'div b':>6s} {'C':>12s} {'gamma_h':>10s}")
    for n in args.nx:
        g = build_grid(RectDomain(0, 1, 0, 1), n, n)
        for s in args.strengths:
            rep = garding_diagnostic(g, DiffusionTensor.identity(), VectorCoefficient(f"{s}*x1", f"{s}*x2"))
            print(f"{n:4d} {s:6g} {2 * s:6g} {rep.values['C']:12.6g} {rep.values['gamma_h']:10.6f}")


if __name__ == "__main__":
    main()
