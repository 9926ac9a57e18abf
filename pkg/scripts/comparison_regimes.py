"""Record discrete comparison-principle violations across grid and convection strength.

The continuous ordering y1 <= y2 need not survive Q1 discretization when
convection dominates on coarse grids. This sweep records where it breaks
instead of asserting it everywhere.
"""
import argparse
import json
from pathlib import Path

from convopt.mesh import DiffusionTensor, RectDomain, VectorCoefficient
from convopt.nonlinearity import NonlinearitySpec, ObjectiveSpec
from convopt.problem import ProblemSpec
from convopt.verification import comparison_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grids", type=int, nargs="+", default=[4, 8, 16, 32])
    ap.add_argument("--strengths", type=float, nargs="+", default=[1, 5, 20, 50, 100, 200])
    ap.add_argument("--pairs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/comparison_regimes.json"))
    args = ap.parse_args()
    f = NonlinearitySpec("power", r=2.0)
    rows = []
    print(f"{'nx':>4s} {'|b|':>6s} {'cell Peclet':>11s} {'max violation':>14s}")
    for n in args.grids:
        for s in args.strengths:
            p = ProblemSpec(RectDomain(0, 1, 0, 1), n, n, DiffusionTensor.identity(),
                            VectorCoefficient(f"{s}", "0"), f, ObjectiveSpec())
            rep = comparison_suite(p, n_pairs=args.pairs, seed=args.seed)
            v = rep.values["max_violation"]
            peclet = s * p.grid.h / 2
            print(f"{n:4d} {s:6g} {peclet:11.3g} {v:14.3e}{'  <- violated' if v > 1e-9 else ''}")
            rows.append({"nx": n, "b": s, "peclet": peclet, "max_violation": v})
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
