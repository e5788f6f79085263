"""Euler-Maruyama Monte Carlo for dX = -M grad U dt + sqrt(2 eps) K dW.

Every path owns the stream ``Generator(PCG64(SeedSequence([seed, i])))``, so a
path's trajectory depends only on (seed, i) and results do not depend on how
paths are scheduled.  Polynomial potentials run in a compiled kernel; other
potentials fall back to a slower Python loop that draws from the same per-path
stream in blocks (its normals are numpy's, so it does not reproduce the
compiled kernel's trajectories bit for bit).

With ``brownian_substeps = k`` each step's Gaussian is the normalized sum of
k consecutive draws, so a run with (dt, k) follows the same Brownian path as
a run with (dt/k, 1).  This couples runs for time-step refinement studies.

Note on conventions: the generator of this SDE is
-grad U . M^T grad f + eps S : Hess f, the generator built from M^T.  Its
committor therefore equals the adjoint equilibrium potential h* of the grid
solver for M (the two coincide when M is symmetric).
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numba
import numpy as np

from .errors import AllCensored, BlowUp, InsufficientData, PreconditionError
from .potential import Landscape, PotentialSpec
from .spectral import DriftMatrix

BLOCK = 8192


@dataclass(frozen=True)
class SdeConfig:
    epsilon: float
    dt: float = 1e-3
    max_time: float = 1e4
    seed: int = 0
    n_paths: int = 1000
    target_radius: float = 0.3
    brownian_substeps: int = 1  # noise of a step = normalized sum of this many draws

    def __post_init__(self):
        if not self.epsilon > 0:
            raise PreconditionError("epsilon must be positive")
        if not 0 < self.dt <= min(self.epsilon / 10, 0.01) * (1 + 1e-12):
            raise PreconditionError(f"need 0 < dt <= min(eps/10, 0.01); got dt={self.dt}")
        if self.max_time <= self.dt:
            raise PreconditionError("max_time must exceed dt")
        if self.n_paths < 1:
            raise PreconditionError("n_paths must be positive")
        if self.target_radius <= 0:
            raise PreconditionError("target_radius must be positive")
        if self.brownian_substeps < 1:
            raise PreconditionError("brownian_substeps must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise PreconditionError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TransitionStats:
    n: int
    mean: float
    stderr: float
    median: float
    log_mean: float
    censored: int
    mean_is_lower_bound: bool
    times: np.ndarray = field(repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("times")
        return d

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TransitionStats)
            and self.to_dict() == other.to_dict()
            and np.array_equal(self.times, other.times)
        )


def path_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _poly_grad(x, coefs, powers, out):
    d = x.shape[0]
    for k in range(d):
        out[k] = 0.0
    for t in range(coefs.shape[0]):
        for k in range(d):
            pk = powers[t, k]
            if pk == 0:
                continue
            term = coefs[t] * pk
            for j in range(d):
                e = powers[t, j] - (1 if j == k else 0)
                if e > 0:
                    term *= x[j] ** e
            out[k] += term


@numba.njit(cache=True)
def _run_path(x0, M, Kn, coefs, powers, dt, max_steps, centers, radii2, blow2, sub, rng):
    """Advance one path until it enters a target ball.

    Returns (target index or -1 if censored, steps taken, blow-up flag).
    """
    d = x0.shape[0]
    x = x0.copy()
    g = np.zeros(d)
    xi = np.zeros(d)
    nt = centers.shape[0]
    for step in range(1, max_steps + 1):
        _poly_grad(x, coefs, powers, g)
        for k in range(d):
            xi[k] = 0.0
        for _s in range(sub):
            for k in range(d):
                xi[k] += rng.standard_normal()
        if sub > 1:
            for k in range(d):
                xi[k] /= math.sqrt(sub)
        for i in range(d):
            drift = 0.0
            noise = 0.0
            for j in range(d):
                drift += M[i, j] * g[j]
                noise += Kn[i, j] * xi[j]
            x[i] += -drift * dt + noise
        r2 = 0.0
        for k in range(d):
            r2 += x[k] * x[k]
        if not r2 < blow2:
            return -1, step, True
        for t in range(nt):
            s = 0.0
            for k in range(d):
                dk = x[k] - centers[t, k]
                s += dk * dk
            if s <= radii2[t]:
                return t, step, False
    return -1, max_steps, False


def _run_path_python(x0, p, M, Kn, dt, max_steps, centers, radii2, blow2, sub, rng):
    x = np.array(x0, dtype=float)
    d = len(x)
    step = 0
    while step < max_steps:
        n = min(BLOCK, max_steps - step)
        xis = rng.standard_normal((n, sub, d)).sum(axis=1) / math.sqrt(sub)
        for i in range(n):
            step += 1
            x = x - dt * (M @ p.grad(x)) + Kn @ xis[i]
            if not float(x @ x) < blow2:
                return -1, step, True
            for t in range(len(centers)):
                if float(np.sum((x - centers[t]) ** 2)) <= radii2[t]:
                    return t, step, False
    return -1, max_steps, False


def _box_diagonal(p: PotentialSpec, landscape: Landscape | None) -> float:
    box = p.box
    if box is None:
        pts = [landscape.m1.location, landscape.m2.location] if landscape is not None else [np.zeros(p.dimension)]
        span = max(1.0, float(np.max(np.abs(np.array(pts)))) * 2)
        return span * math.sqrt(p.dimension)
    b = np.asarray(box, dtype=float)
    return float(np.linalg.norm(b[:, 1] - b[:, 0]))


def _simulate(p, drift: DriftMatrix, x0, centers, radii, cfg: SdeConfig, n_paths: int, seed_offset: int, blow_radius: float):
    M = np.ascontiguousarray(drift.M, dtype=float)
    Kn = np.ascontiguousarray(drift.K * math.sqrt(2 * cfg.epsilon * cfg.dt), dtype=float)
    max_steps = int(math.ceil(cfg.max_time / cfg.dt))
    centers = np.ascontiguousarray(np.atleast_2d(centers), dtype=float)
    radii2 = np.asarray(radii, dtype=float) ** 2
    blow2 = blow_radius**2
    x0 = np.asarray(x0, dtype=float)
    codes = np.empty(n_paths, dtype=np.int64)
    steps = np.empty(n_paths, dtype=np.int64)
    poly = p.poly.arrays() if p.poly is not None else None
    sub = int(cfg.brownian_substeps)
    for i in range(n_paths):
        rng = path_rng(cfg.seed, seed_offset + i)
        if poly is not None:
            c, s, blown = _run_path(x0, M, Kn, poly[0], poly[1], cfg.dt, max_steps, centers, radii2, blow2, sub, rng)
        else:
            c, s, blown = _run_path_python(x0, p, M, Kn, cfg.dt, max_steps, centers, radii2, blow2, sub, rng)
        if blown:
            raise BlowUp(f"path {i} left the ball of radius {blow_radius:.3g}; reduce dt")
        codes[i], steps[i] = c, s
    return codes, steps


def _stats(times: np.ndarray, censored: np.ndarray) -> TransitionStats:
    n = len(times)
    done = times[~censored]
    if done.size == 0:
        raise AllCensored("every path reached max_time")
    std = float(np.std(times, ddof=1)) if n > 1 else 0.0
    return TransitionStats(
        n=n,
        mean=float(np.mean(times)),
        stderr=std / math.sqrt(n),
        median=float(np.median(times)),
        log_mean=float(np.mean(np.log(times))),
        censored=int(censored.sum()),
        mean_is_lower_bound=bool(censored.any()),
        times=times,
    )


def simulate_hitting(p: PotentialSpec, landscape: Landscape, drift: DriftMatrix, cfg: SdeConfig, csv_path=None) -> TransitionStats:
    """Hitting time of the ball of radius ``cfg.target_radius`` around m2, started at m1.

    Censored paths contribute ``max_time`` and flag the mean as a lower bound.
    """
    if drift.M.shape != (p.dimension, p.dimension):
        raise PreconditionError("drift dimension does not match the potential")
    c2 = landscape.m2.location
    if np.linalg.norm(landscape.m1.location - c2) <= cfg.target_radius:
        raise PreconditionError("start point lies inside the target ball")
    blow = 10 * _box_diagonal(p, landscape)
    codes, steps = _simulate(p, drift, landscape.m1.location, [c2], [cfg.target_radius], cfg, cfg.n_paths, 0, blow)
    censored = codes < 0
    times = steps * cfg.dt
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["path_index", "hit_time", "censored"])
            for i, (t, c) in enumerate(zip(times, censored)):
                w.writerow([i, repr(float(t)), int(c)])
    return _stats(times, censored)


def estimate_committor(
    x,
    A: tuple[Sequence[float], float],
    B: tuple[Sequence[float], float],
    p: PotentialSpec,
    drift: DriftMatrix,
    cfg: SdeConfig,
    seed_offset: int = 0,
) -> tuple[float, float]:
    """P_x[H_A < H_B] with its binomial standard error.

    ``A`` and ``B`` are (center, radius) balls.  Censored paths are dropped;
    if all are censored AllCensored is raised.
    """
    x = np.asarray(x, dtype=float)
    for (c, r), name in ((A, "A"), (B, "B")):
        if np.linalg.norm(x - np.asarray(c, dtype=float)) <= r:
            raise PreconditionError(f"start point lies in {name}")
    centers = [A[0], B[0]]
    radii = [A[1], B[1]]
    blow = 10 * _box_diagonal(p, None)
    codes, _ = _simulate(p, drift, x, centers, radii, cfg, cfg.n_paths, seed_offset, blow)
    done = codes >= 0
    n = int(done.sum())
    if n == 0:
        raise AllCensored("no path reached A or B")
    q = float(np.mean(codes[done] == 0))
    return q, math.sqrt(q * (1 - q) / n)


def arrhenius_fit(results: Sequence[tuple[float, TransitionStats | float]]) -> tuple[float, float, float]:
    """Least squares of log(mean) against 1/eps; the slope estimates H - h1.

    Entries may be TransitionStats or plain mean values.
    """
    if len({float(e) for e, _ in results}) < 3:
        raise InsufficientData("need at least three distinct epsilon values")
    x, y = [], []
    for eps, st in results:
        if isinstance(st, TransitionStats):
            if st.censored:
                raise PreconditionError("censored statistics bias the fit")
            m = st.mean
        else:
            m = float(st)
        if not m > 0:
            raise PreconditionError("means must be positive")
        x.append(1.0 / eps)
        y.append(math.log(m))
    x, y = np.array(x), np.array(y)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2
