"""Monte Carlo mean transition time m1 -> ball(m2) against the Eyring-Kramers prediction.

    python3 scripts/mc_transitions.py --eps 0.15 --paths 4000 --seed 12345
"""
import argparse

from _common import DRIFTS, emit, instance, out_dir, prediction, saddles

from metastable.sde import SdeConfig, simulate_hitting

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--eps", type=float, nargs="+", default=[0.15])
ap.add_argument("--paths", type=int, default=4000)
ap.add_argument("--dt", type=float, default=1e-3)
ap.add_argument("--seed", type=int, default=12345)
ap.add_argument("--radius", type=float, nargs="+", default=[0.3], help="target ball radii to compare")
args = ap.parse_args()

p, land = instance()
rows = []
for eps in args.eps:
    for r in args.radius:
        for name in sorted(DRIFTS):
            drift, sas = saddles(land, DRIFTS[name])
            st = simulate_hitting(p, land, drift, SdeConfig(eps, dt=args.dt, seed=args.seed, n_paths=args.paths, target_radius=r))
            pred, _ = prediction(land, sas, eps)
            rows.append([name, eps, r, st.mean, st.stderr, st.censored, pred.mean_hit, st.mean / pred.mean_hit])
emit(rows, ["drift", "epsilon", "target_radius", "mc_mean", "stderr", "censored", "ek_mean", "ratio"], out_dir("mc_transitions.csv"))
