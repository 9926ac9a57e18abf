"""Solve every catalog control problem with both optimizers and tabulate the outcome.

    python3 scripts/catalog_sweep.py --nx 32 --out runs/catalog
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from convopt.control import critical_cone_curvature, optimize_projected_gradient, optimize_semismooth_newton
from convopt.io import export_field, export_report
from convopt.problem import CATALOG, catalog_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=32)
    ap.add_argument("--nu", type=float, default=1e-2)
    ap.add_argument("--out", type=Path, default=Path("runs/catalog"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    print(f"{'problem':22s} {'ssn it':>6s} {'pg it':>6s} {'|u_ssn-u_pg|':>12s} {'J':>12s} {'curv':>10s} {'sec':>6s}")
    for name in sorted(CATALOG):
        p = catalog_problem(name, nx=args.nx, nu=args.nu)
        t0 = time.perf_counter()
        ssn = optimize_semismooth_newton(p, np.zeros(p.grid.n_dofs))
        pg = optimize_projected_gradient(p, np.zeros(p.grid.n_dofs))
        cone = critical_cone_curvature(p, ssn.u)
        dt = time.perf_counter() - t0
        gap = float(np.max(np.abs(ssn.u - pg.u)))
        k = cone.values["min_curvature"]
        print(f"{name:22s} {ssn.iterations:6d} {pg.iterations:6d} {gap:12.2e} {ssn.J_history[-1]:12.6e} {k:10.6f} {dt:6.2f}")
        export_report(ssn, args.out / f"{name}_ssn.json")
        export_field(p.grid, ssn.u, args.out / f"{name}_control.vtk", "vtk", name="control")
        rows.append({"problem": name, "ssn_iterations": ssn.iterations, "pg_iterations": pg.iterations,
                     "max_gap": gap, "J": ssn.J_history[-1], "min_curvature": k})
    (args.out / "summary.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
