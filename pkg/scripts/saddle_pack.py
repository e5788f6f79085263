"""Upper bound from the saddle test pair (p, Theta flows) against T_eps * omega.

Also writes the region labels and the smoothed test function as GRDF binaries.

    python3 scripts/saddle_pack.py --eps 0.05 --cells 8 --eta 2
"""
import argparse
import math
import warnings

from _common import DRIFTS, emit, instance, out_dir, prediction, saddles

from metastable import grid_pde as gp
from metastable import variational as vr

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--eps", type=float, nargs="+", default=[0.05])
ap.add_argument("--cells", type=float, nargs="+", default=[8.0, 12.0])
ap.add_argument("--eta", type=int, default=2)
ap.add_argument("--radius", type=float, default=0.2)
ap.add_argument("--K", type=float, default=None, help="default: largest K keeping the wells outside C_eps")
args = ap.parse_args()

p, land = instance()
rows = []
for name in sorted(DRIFTS):
    drift, sas = saddles(land, DRIFTS[name])
    for eps in args.eps:
        for cells in args.cells:
            grid = gp.Grid2D.from_spacing((0.0, 0.0), (1.8, 1.3), math.sqrt(eps) / cells)
            ops = gp.discretize_generator(grid, p, drift, eps)
            mask = gp.ball_mask(grid, land.m1.location, args.radius, land.m2.location, args.radius)
            pred, Z = prediction(land, sas, eps)
            rep, _, _ = gp.capacity(ops, mask, Z, with_swap=False)
            pack = vr.build_saddle_pack(sas[0], grid, land, eps, K=args.K, eta_cells=args.eta, mask=mask)
            f, phi = pack.upper_pair(ops, Z)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                cert = vr.dirichlet_bound(f, phi, ops, mask, Z, strict=False)
            rows.append(
                [name, eps, cells, pack.K, cert.value / pred.cap_asym, rep.cap / pred.cap_asym, cert.status, cert.feasibility["rel_div"]]
            )
            tag = f"{name}_eps{eps:g}_c{cells:g}"
            out_dir(f"pack_regions_{tag}.grdf").write_bytes(gp.field_to_bytes(pack.region_codes()))
            out_dir(f"pack_f_{tag}.grdf").write_bytes(gp.field_to_bytes(f))
emit(rows, ["drift", "epsilon", "cells_per_sqrt_eps", "K", "bound_over_T_omega", "cap_over_T_omega", "status", "rel_div"], out_dir("saddle_pack.csv"))
