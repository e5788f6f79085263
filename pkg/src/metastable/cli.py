"""Command-line entry point: ``metastable <command> --config run.toml``.

Commands write UTF-8 JSON (and CSV where useful) into the output directory.
Every JSON report carries the resolved configuration and a SHA-256 of its
own content (computed without the timestamp), so reruns with the same
configuration and seed produce identical hashes.

Exit codes: 0 success, 1 computational failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import grid_pde as gp
from . import kramers, sde, spectral, variational
from .config import RunConfig, load_config
from .errors import ConfigError, MetastableError
from .potential import Landscape, PotentialSpec, find_critical_points, build_landscape, make_potential

RESIDUAL_TOL = 1e-8


# ---------------------------------------------------------------------------
# shared pipeline pieces


@dataclass
class Instance:
    potential: PotentialSpec
    landscape: Landscape
    drift: spectral.DriftMatrix
    saddles: list

    @property
    def well_hessian(self) -> np.ndarray:
        return self.potential.hess(self.landscape.m1.location)


def build_instance(cfg: RunConfig) -> Instance:
    pb = cfg.potential
    p = make_potential(pb.name, pb.params, pb.box, pb.seeds)
    land = build_landscape(p, find_critical_points(p, p.seeds))
    drift = spectral.decompose_drift(cfg.drift.M)
    saddles = [spectral.analyze_saddle(p.hess(g.location), drift, g.location) for g in land.gates]
    return Instance(p, land, drift, saddles)


def grid_for(cfg: RunConfig, epsilon: float) -> gp.Grid2D:
    g = cfg.grid
    box = tuple(tuple(float(v) for v in b) for b in g.box)
    if g.cells_per_sqrt_eps is None:
        return gp.Grid2D(box, g.nx, g.ny)
    center = ((box[0][0] + box[0][1]) / 2, (box[1][0] + box[1][1]) / 2)
    half = ((box[0][1] - box[0][0]) / 2, (box[1][1] - box[1][0]) / 2)
    return gp.Grid2D.from_spacing(center, half, math.sqrt(epsilon) / g.cells_per_sqrt_eps)


def capacity_record(cfg: RunConfig, inst: Instance, epsilon: float) -> dict:
    """PDE capacity, optimizer certificates, saddle-pack certificate and the asymptotic."""
    grid = grid_for(cfg, epsilon)
    ops = gp.discretize_generator(grid, inst.potential, inst.drift, epsilon)
    land = inst.landscape
    mask = gp.ball_mask(grid, land.m1.location, cfg.grid.radius_a, land.m2.location, cfg.grid.radius_b)
    Z = math.exp(kramers.log_laplace_z(land, epsilon))  # same Z as the asymptotic, so it cancels in ratios
    rep, h, hs = gp.capacity(ops, mask, Z)
    cap = rep.cap
    f1, phi1 = variational.prop1_optimizer(h, hs, ops, Z)
    f2, phi2 = variational.prop2_optimizer(h, hs, cap, ops, Z)
    upper = variational.dirichlet_bound(f1, phi1, ops, mask, Z)
    lower = variational.thomson_bound(f2, phi2, ops, mask, Z)
    pred = kramers.predict(land, inst.saddles, inst.well_hessian, epsilon, log_Z=math.log(Z))
    nu = gp.equilibrium_measure(hs, ops, mask, cap, Z)
    lhs, rhs, defect = gp.check_prop3(np.ones(grid.shape), mask, ops, hs, nu, epsilon, Z, cap)
    out = {
        "epsilon": epsilon,
        "grid": {"box": grid.box, "nx": grid.nx, "ny": grid.ny, "h": grid.h},
        "capacity": rep.to_dict(),
        "cap_asym": pred.cap_asym,
        "ratio_pde_asym": cap / pred.cap_asym,
        "dirichlet": upper.to_dict(),
        "thomson": lower.to_dict(),
        "equilibrium_measure_mass": nu.total,
        "prop3": {"lhs": lhs, "rhs": rhs, "defect": defect},
    }
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pack = variational.build_saddle_pack(
                inst.saddles[0], grid, land, epsilon, K=cfg.grid.pack_K, eta_cells=cfg.grid.eta_cells, mask=mask
            )
            f, phi = pack.upper_pair(ops, Z)
            cert = variational.dirichlet_bound(f, phi, ops, mask, Z, strict=False)
        out["saddle_pack"] = {
            "K": pack.K,
            "delta": pack.delta,
            "certificate": cert.to_dict(),
            "ratio_to_T_omega": cert.value / pred.cap_asym,
        }
    except MetastableError as exc:
        out["saddle_pack"] = {"error": f"{type(exc).__name__}: {exc}"}
    return out


# ---------------------------------------------------------------------------
# report plumbing


def _canon(obj):
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _canon(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_report(out_dir: Path, name: str, cfg: RunConfig, payload: dict) -> Path:
    body = _canon({"config": cfg.to_dict(), **payload})
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()
    doc = {**body, "content_hash": digest, "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(cfg: RunConfig, out: Path) -> int:
    inst = build_instance(cfg)
    write_report(out, "landscape.json", cfg, {"landscape": inst.landscape.to_dict()})
    records, ok = [], True
    for sa in inst.saddles:
        res = spectral.verify_algebra(sa)
        ok &= res["max_residual"] < RESIDUAL_TOL and res["positive_definite"]
        records.append(sa.to_dict(residuals=res))
    write_report(out, "saddle.json", cfg, {"drift": inst.drift.to_dict(), "saddles": records, "residuals_ok": ok})
    return 0 if ok else 1


def cmd_predict(cfg: RunConfig, out: Path) -> int:
    inst = build_instance(cfg)
    recs = [kramers.predict(inst.landscape, inst.saddles, inst.well_hessian, e).to_dict() for e in cfg.epsilons]
    write_report(out, "predictions.json", cfg, {"predictions": recs})
    return 0


def cmd_capacity(cfg: RunConfig, out: Path) -> int:
    inst = build_instance(cfg)
    recs = [capacity_record(cfg, inst, e) for e in cfg.epsilons]
    write_report(out, "capacity.json", cfg, {"records": recs})
    return 0


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    inst = build_instance(cfg)
    recs = []
    out.mkdir(parents=True, exist_ok=True)
    for e in cfg.epsilons:
        s = cfg.sde
        sc = sde.SdeConfig(e, s.dt, s.max_time, s.seed, s.n_paths, s.target_radius)
        csv_path = out / f"hitting_eps{e:g}.csv" if "csv" in cfg.output.formats else None
        st = sde.simulate_hitting(inst.potential, inst.landscape, inst.drift, sc, csv_path=csv_path)
        pred = kramers.predict(inst.landscape, inst.saddles, inst.well_hessian, e)
        recs.append({"epsilon": e, "stats": st.to_dict(), "ek_mean": pred.mean_hit, "ratio": st.mean / pred.mean_hit})
    write_report(out, "simulate.json", cfg, {"records": recs})
    return 0


def _check(fn):
    try:
        detail = fn()
        return {"pass": bool(detail.pop("pass")), **detail}
    except MetastableError as exc:
        return {"pass": False, "error": f"{type(exc).__name__}: {exc}"}


def _validate_spectral(cfg: RunConfig, inst_box: dict) -> dict:
    rng = np.random.default_rng(cfg.sde.seed)
    worst = 0.0
    for _ in range(500):
        L, M = spectral.random_instance(rng)
        sa = spectral.analyze_saddle(L, spectral.decompose_drift(M))
        res = spectral.verify_algebra(sa)
        worst = max(worst, res["max_residual"], res["mu_match"])
    inst = inst_box["inst"] = build_instance(cfg)
    own = max(spectral.verify_algebra(sa)["max_residual"] for sa in inst.saddles)
    return {"pass": worst < RESIDUAL_TOL and own < RESIDUAL_TOL, "random_max_residual": worst, "instance_max_residual": own}


def _validate_pde(cfg: RunConfig, inst_box: dict) -> dict:
    inst = inst_box.get("inst") or build_instance(cfg)
    rec = capacity_record(cfg, inst, cfg.epsilons[0])
    cap = rec["capacity"]["cap_dirichlet_form"]
    d = rec["capacity"]["symmetry_defects"]
    ok = (
        d["cap_vs_adjoint"] < 1e-8
        and d["swap"] < 1e-10
        and abs(rec["dirichlet"]["value"] / cap - 1) < 1e-8
        and abs(rec["thomson"]["value"] / cap - 1) < 1e-8
        and abs(rec["equilibrium_measure_mass"] - 1) < 1e-8
    )
    inst_box["capacity"] = rec
    return {"pass": ok, "defects": d, "dirichlet_over_cap": rec["dirichlet"]["value"] / cap, "thomson_over_cap": rec["thomson"]["value"] / cap}


def _validate_prop3(cfg: RunConfig, inst_box: dict) -> dict:
    rec = inst_box.get("capacity") or capacity_record(cfg, inst_box.get("inst") or build_instance(cfg), cfg.epsilons[0])
    return {"pass": rec["prop3"]["defect"] < 5e-2, **rec["prop3"]}


def _validate_bl6(cfg: RunConfig, inst_box: dict) -> dict:
    inst = inst_box.get("inst") or build_instance(cfg)
    ratios = {}
    for sa in inst.saddles:
        r = variational.saddle_box_quadrature(sa, inst.potential, 0.05, H=inst.landscape.H) / variational.bl6_target(sa, 0.05)
        ratios[str(sa.sigma.tolist())] = r
    return {"pass": all(0.9 <= r <= 1.1 for r in ratios.values()), "ratios_eps_0.05": ratios}


def _validate_sde(cfg: RunConfig, inst_box: dict) -> dict:
    """Committor at x and at its mirror image through the saddle sum to 1.

    Only meaningful when U is symmetric under that point reflection, which
    is checked first; the drift term is invariant under it for any M.
    """
    inst = inst_box.get("inst") or build_instance(cfg)
    land, p = inst.landscape, inst.potential
    sigma = land.gates[0].location
    x = sigma + 0.4 * (land.m1.location - sigma) / np.linalg.norm(land.m1.location - sigma) + np.array([0.0, 0.2])
    xm = 2 * sigma - x
    symmetric = abs(float(p.U(x)) - float(p.U(xm))) < 1e-12 and np.allclose(2 * sigma - land.m1.location, land.m2.location)
    if not symmetric:
        return {"pass": True, "skipped": "potential not point-symmetric about the gate"}
    eps = max(cfg.epsilons)
    sc = sde.SdeConfig(eps, min(cfg.sde.dt, eps / 10), 1e3, cfg.sde.seed, 400, cfg.sde.target_radius)
    A = (land.m1.location, cfg.grid.radius_a)
    B = (land.m2.location, cfg.grid.radius_b)
    q1, s1 = sde.estimate_committor(x, A, B, p, inst.drift, sc, seed_offset=0)
    q2, s2 = sde.estimate_committor(xm, A, B, p, inst.drift, sc, seed_offset=10**6)
    joint = math.hypot(s1, s2)
    return {"pass": abs(q1 + q2 - 1) <= 3 * max(joint, 1e-12), "q": q1, "q_mirror": q2, "joint_stderr": joint}


CHECKS = {
    "spectral": _validate_spectral,
    "pde": _validate_pde,
    "prop3": _validate_prop3,
    "bl6": _validate_bl6,
    "sde": _validate_sde,
}


def cmd_validate(cfg: RunConfig, out: Path, checks: list[str] | None = None) -> int:
    names = checks or list(CHECKS)
    unknown = set(names) - set(CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {sorted(CHECKS)}")
    shared: dict = {}
    results = {}
    for name in names:
        results[name] = _check(lambda fn=CHECKS[name]: fn(cfg, shared))
    ok = all(r["pass"] for r in results.values())
    write_report(out, "validation.json", cfg, {"checks": results, "all_pass": ok})
    return 0 if ok else 1


REPORT_COLUMNS = ["epsilon", "cap_pde", "cap_asym", "dirichlet", "thomson", "mc_mean", "ek_mean"]


def cmd_report(cfg: RunConfig, out: Path) -> int:
    rows: dict[float, dict] = {}

    def row(e):
        return rows.setdefault(float(e), {"epsilon": float(e)})

    def load(name):
        path = out / name
        return json.loads(path.read_text(encoding="utf-8")) if path.exists() else None

    pred = load("predictions.json")
    if pred:
        for r in pred["predictions"]:
            row(r["epsilon"]).update(cap_asym=r["cap_asym"], ek_mean=r["mean_hit"])
    cap = load("capacity.json")
    if cap:
        for r in cap["records"]:
            row(r["epsilon"]).update(
                cap_pde=r["capacity"]["cap_dirichlet_form"],
                cap_asym=r["cap_asym"],
                dirichlet=r["dirichlet"]["value"],
                thomson=r["thomson"]["value"],
            )
    sim = load("simulate.json")
    if sim:
        for r in sim["records"]:
            row(r["epsilon"]).update(mc_mean=r["stats"]["mean"], ek_mean=r["ek_mean"])
    if not rows:
        raise MetastableError(f"no prior outputs found in {out}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, restval="")
        w.writeheader()
        for e in sorted(rows, reverse=True):
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rows[e].items()})
    return 0


COMMANDS = {
    "analyze": cmd_analyze,
    "predict": cmd_predict,
    "capacity": cmd_capacity,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="metastable", description="Eyring-Kramers asymptotics for non-reversible diffusions")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", help="TOML or JSON run configuration")
        sp_.add_argument("--seed", type=int, help="override sde.seed")
        sp_.add_argument("--out", help="override output.dir")
        if name == "validate":
            sp_.add_argument("--checks", help="comma-separated subset of " + ",".join(CHECKS))
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
        out = Path(cfg.output.dir)
        if args.command == "validate":
            checks = [c.strip() for c in args.checks.split(",")] if args.checks else None
            return cmd_validate(cfg, out, checks)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (MetastableError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
