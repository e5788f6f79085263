"""Arrhenius slope of Monte Carlo mean transition times (true barrier 0.25).

    python3 scripts/arrhenius.py --eps 0.25 0.18 0.15 --paths 1000
"""
import argparse

from _common import DRIFTS, emit, instance, out_dir, prediction, saddles

from metastable.sde import SdeConfig, arrhenius_fit, simulate_hitting

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--eps", type=float, nargs="+", default=[0.25, 0.18, 0.15])
ap.add_argument("--paths", type=int, default=1000)
ap.add_argument("--seed", type=int, default=31)
args = ap.parse_args()

p, land = instance()
rows = []
for name in sorted(DRIFTS):
    drift, sas = saddles(land, DRIFTS[name])
    res = [(e, simulate_hitting(p, land, drift, SdeConfig(e, dt=1e-3, seed=args.seed, n_paths=args.paths))) for e in args.eps]
    slope, intercept, r2 = arrhenius_fit(res)
    ek = [(e, prediction(land, sas, e)[0].mean_hit) for e in args.eps]
    ek_slope, _, _ = arrhenius_fit(ek)
    rows.append([name, slope, intercept, r2, ek_slope])
emit(rows, ["drift", "mc_slope", "mc_intercept", "r2", "ek_slope"], out_dir("arrhenius.csv"))
