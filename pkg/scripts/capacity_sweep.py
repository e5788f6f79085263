"""Grid capacity against the asymptotic cap_asym = T_eps * sum(omega) over an eps sweep.

    python3 scripts/capacity_sweep.py --eps 0.15 0.1 0.07 --radius 0.2 --cells 8
"""
import argparse
import math

from _common import DRIFTS, emit, instance, out_dir, prediction, saddles

from metastable import grid_pde as gp

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--eps", type=float, nargs="+", default=[0.15, 0.1, 0.07, 0.05])
ap.add_argument("--radius", type=float, default=0.2)
ap.add_argument("--cells", type=float, default=8.0, help="grid spacing h = sqrt(eps)/cells")
ap.add_argument("--drift", choices=sorted(DRIFTS), nargs="+", default=sorted(DRIFTS))
args = ap.parse_args()

p, land = instance()
rows = []
for name in args.drift:
    drift, sas = saddles(land, DRIFTS[name])
    for eps in args.eps:
        # the corners of the larger box become Peclet-unstable below eps ~ 0.06
        half = (2.0, 1.5) if eps > 0.06 else (1.8, 1.3)
        grid = gp.Grid2D.from_spacing((0.0, 0.0), half, math.sqrt(eps) / args.cells)
        ops = gp.discretize_generator(grid, p, drift, eps)
        mask = gp.ball_mask(grid, land.m1.location, args.radius, land.m2.location, args.radius)
        pred, Z = prediction(land, sas, eps)
        rep, _, _ = gp.capacity(ops, mask, Z, with_swap=False)
        rows.append([name, eps, grid.nx, grid.ny, rep.cap, pred.cap_asym, rep.cap / pred.cap_asym])
emit(rows, ["drift", "epsilon", "nx", "ny", "cap_pde", "cap_asym", "ratio"], out_dir("capacity_sweep.csv"))
