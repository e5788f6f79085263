"""Saddle-box integral of grad p . M grad p e^{-(U-H)/eps} over (2 pi eps)^{d/2-1} omega.

    python3 scripts/bl6_quadrature.py --eps 0.2 0.1 0.05 0.02 0.01
"""
import argparse

from _common import DRIFTS, emit, instance, out_dir, saddles

from metastable.variational import bl6_target, saddle_box_quadrature

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.02, 0.01])
ap.add_argument("--K", type=float, default=4.0)
ap.add_argument("--order", type=int, default=24)
args = ap.parse_args()

p, land = instance()
rows = []
for name in sorted(DRIFTS):
    _, sas = saddles(land, DRIFTS[name])
    sa = sas[0]
    for eps in args.eps:
        val = saddle_box_quadrature(sa, p, eps, K=args.K, order=args.order)
        rows.append([name, eps, val, bl6_target(sa, eps), val / bl6_target(sa, eps)])
emit(rows, ["drift", "epsilon", "integral", "target", "ratio"], out_dir("bl6_quadrature.csv"))
