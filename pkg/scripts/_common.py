"""Shared setup for the experiment scripts."""
import math
import sys
from pathlib import Path

import numpy as np

from metastable.kramers import log_laplace_z, predict
from metastable.potential import build_landscape, find_critical_points, make_potential
from metastable.spectral import analyze_saddle, decompose_drift

DRIFTS = {"rev": np.eye(2), "nonrev": np.array([[1.0, 1.0], [-1.0, 1.0]])}


def instance(name="quartic2d"):
    p = make_potential(name)
    return p, build_landscape(p, find_critical_points(p, p.seeds))


def saddles(landscape, M):
    p = landscape.potential
    drift = decompose_drift(M)
    return drift, [analyze_saddle(p.hess(g.location), drift, g.location) for g in landscape.gates]


def prediction(landscape, sas, eps):
    Z = math.exp(log_laplace_z(landscape, eps))
    return predict(landscape, sas, landscape.potential.hess(landscape.m1.location), eps, Z=Z), Z


def out_dir(name):
    d = Path(__file__).resolve().parents[1] / "out" / "scripts"
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def emit(rows, header, path):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    w = csv.writer(sys.stdout)
    w.writerow(header)
    w.writerows(rows)
