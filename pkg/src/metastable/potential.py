"""Analytic potentials, critical points, gates and structural checks."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateHessian,
    DimensionUnsupported,
    NoGate,
    NonConvergence,
    NotDoubleWell,
    PreconditionError,
)


NEWTON_TOL = 1e-10
DEGENERACY_TOL = 1e-8
TAU_GATE = 1e-3
MERGE_RADIUS = 1e-6
MAX_NEWTON = 100


def fd_step(x: np.ndarray) -> np.ndarray:
    """Central-difference step 1e-5 * (1 + |x|), broadcast over leading axes."""
    return 1e-5 * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# polynomial backend


@dataclass(frozen=True)
class Polynomial:
    """Sum of monomials ``coef * prod_k x_k**powers[k]``."""

    coefs: tuple[float, ...]
    powers: tuple[tuple[int, ...], ...]

    @classmethod
    def from_terms(cls, terms: Sequence[tuple[float, Sequence[int]]]) -> "Polynomial":
        coefs, powers = [], []
        for coef, pw in terms:
            pw = tuple(int(p) for p in pw)
            if any(p < 0 for p in pw):
                raise ValueError("negative exponent in polynomial term")
            coefs.append(float(coef))
            powers.append(pw)
        if not coefs:
            raise ValueError("polynomial needs at least one term")
        d = len(powers[0])
        if any(len(p) != d for p in powers):
            raise ValueError("inconsistent term dimensions")
        return cls(tuple(coefs), tuple(powers))

    @property
    def dimension(self) -> int:
        return len(self.powers[0])

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.coefs, dtype=float), np.asarray(self.powers, dtype=np.int64)

    @staticmethod
    def _pow(x: np.ndarray, p: int) -> np.ndarray:
        if p < 0:
            return np.zeros_like(x)
        return x**p

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for c, pw in zip(self.coefs, self.powers):
            term = np.full(x.shape[:-1], c)
            for k, p in enumerate(pw):
                if p:
                    term = term * x[..., k] ** p
            out = out + term
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.dimension
        out = np.zeros(x.shape)
        for c, pw in zip(self.coefs, self.powers):
            for i in range(d):
                if pw[i] == 0:
                    continue
                term = np.full(x.shape[:-1], c * pw[i])
                for k, p in enumerate(pw):
                    e = p - 1 if k == i else p
                    if e:
                        term = term * x[..., k] ** e
                out[..., i] += term
        return out

    def hess(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.dimension
        out = np.zeros(x.shape + (d,))
        for c, pw in zip(self.coefs, self.powers):
            for i in range(d):
                for j in range(i, d):
                    q = list(pw)
                    factor = c
                    factor *= q[i]
                    q[i] -= 1
                    factor *= q[j]
                    q[j] -= 1
                    if factor == 0:
                        continue
                    term = np.full(x.shape[:-1], factor)
                    for k, e in enumerate(q):
                        if e:
                            term = term * x[..., k] ** e
                    out[..., i, j] += term
                    if i != j:
                        out[..., j, i] += term
        return out

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        return np.trace(self.hess(x), axis1=-2, axis2=-1)


# ---------------------------------------------------------------------------
# potential spec


@dataclass(frozen=True)
class PotentialSpec:
    """A potential U on R^d with vectorized evaluators.

    ``value`` maps an array of shape (..., d) to (...). ``grad``/``hess`` are
    optional; when missing, central finite differences are used.
    """

    name: str
    dimension: int
    params: dict = field(default_factory=dict)
    value_fn: Callable[[np.ndarray], np.ndarray] | None = None
    grad_fn: Callable[[np.ndarray], np.ndarray] | None = None
    hess_fn: Callable[[np.ndarray], np.ndarray] | None = None
    poly: Polynomial | None = None
    box: tuple[tuple[float, float], ...] | None = None
    seeds: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.value_fn is None and self.poly is None:
            raise ValueError("potential needs a value function or a polynomial")

    @property
    def analytic(self) -> bool:
        return self.poly is not None or self.grad_fn is not None

    def U(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.poly is not None:
            return self.poly.value(x)
        return np.asarray(self.value_fn(x), dtype=float)

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.poly is not None:
            return self.poly.grad(x)
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(x), dtype=float)
        return self.fd_grad(x)

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.poly is not None:
            return self.poly.hess(x)
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(x), dtype=float)
        return self.fd_hess(x)

    def laplacian(self, x) -> np.ndarray:
        return np.trace(self.hess(x), axis1=-2, axis2=-1)

    def fd_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = fd_step(x)
        out = np.empty(x.shape)
        for i in range(self.dimension):
            e = np.zeros(self.dimension)
            e[i] = 1.0
            out[..., i] = (self.U(x + h * e) - self.U(x - h * e)) / (2 * h[..., 0])
        return out

    def fd_hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.dimension
        out = np.empty(x.shape + (d,))
        if self.poly is not None or self.grad_fn is not None:
            # differentiate the analytic gradient
            h = fd_step(x)
            for j in range(d):
                e = np.zeros(d)
                e[j] = 1.0
                out[..., :, j] = (self.grad(x + h * e) - self.grad(x - h * e)) / (2 * h)
            return 0.5 * (out + np.swapaxes(out, -1, -2))
        # second differences of U need a larger step
        h = 1e-4 * (1.0 + np.linalg.norm(x, axis=-1))
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = 1.0
            for j in range(i, d):
                ej = np.zeros(d)
                ej[j] = 1.0
                hh = h[..., None]
                v = (
                    self.U(x + hh * (ei + ej))
                    - self.U(x + hh * (ei - ej))
                    - self.U(x - hh * (ei - ej))
                    + self.U(x - hh * (ei + ej))
                ) / (4 * h * h)
                out[..., i, j] = v
                out[..., j, i] = v
        return out


def quartic2d(params: dict | None = None, **kw) -> PotentialSpec:
    """U(x, y) = (x^2 - 1)^2 / 4 + y^2 / 2 (+ tilt * x)."""
    params = dict(params or {})
    tilt = float(params.get("tilt", 0.0))
    terms = [(0.25, (4, 0)), (-0.5, (2, 0)), (0.25, (0, 0)), (0.5, (0, 2))]
    if tilt:
        terms.append((tilt, (1, 0)))
    name = kw.pop("name", "quartic2d" if not tilt else "tilted")
    kw.setdefault("box", ((-3.0, 3.0), (-3.0, 3.0)))
    kw.setdefault("seeds", ((-1.0, 0.0), (1.0, 0.0), (0.0, 0.0)))
    return PotentialSpec(
        name=name, dimension=2, params=params, poly=Polynomial.from_terms(terms), **kw
    )


def tilted(params: dict | None = None, **kw) -> PotentialSpec:
    params = dict(params or {})
    params.setdefault("tilt", 0.1)
    return quartic2d(params, name="tilted", **kw)


def polynomial(params: dict, **kw) -> PotentialSpec:
    """User polynomial from ``params['terms'] = [[coef, [p1, ..., pd]], ...]``."""
    if "terms" not in params:
        raise ValueError("polynomial potential needs params.terms")
    poly = Polynomial.from_terms([(t[0], t[1]) for t in params["terms"]])
    return PotentialSpec(
        name=kw.pop("name", "polynomial"),
        dimension=poly.dimension,
        params=dict(params),
        poly=poly,
        **kw,
    )


BUILTINS = {"quartic2d": quartic2d, "tilted": tilted, "polynomial": polynomial}


def make_potential(name: str, params: dict | None = None, box=None, seeds=None) -> PotentialSpec:
    if name not in BUILTINS:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(BUILTINS)}")
    kw = {}
    if box is not None:
        kw["box"] = tuple((float(a), float(b)) for a, b in box)
    if seeds is not None:
        kw["seeds"] = tuple(tuple(float(v) for v in s) for s in seeds)
    return BUILTINS[name](dict(params or {}), **kw)


# ---------------------------------------------------------------------------
# critical points


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    kind: str  # "minimum" | "saddle" | "other"
    hessian_eigenvalues: np.ndarray
    value: float

    def to_dict(self) -> dict:
        return {
            "location": [float(v) for v in self.location],
            "kind": self.kind,
            "hessian_eigenvalues": [float(v) for v in self.hessian_eigenvalues],
            "value": float(self.value),
        }


def classify(eigs: np.ndarray, degeneracy_tol: float = DEGENERACY_TOL) -> str:
    eigs = np.sort(np.asarray(eigs, dtype=float))
    scale = float(np.max(np.abs(eigs))) if eigs.size else 0.0
    thr = degeneracy_tol * scale
    if scale == 0.0 or np.any(np.abs(eigs) <= thr):
        raise DegenerateHessian(f"Hessian eigenvalues {eigs} are degenerate")
    n_neg = int(np.sum(eigs < -thr))
    if n_neg == 0:
        return "minimum"
    if n_neg == 1:
        return "saddle"
    return "other"


def _newton(p: PotentialSpec, x0: np.ndarray, tol: float, max_iter: int) -> np.ndarray | None:
    x = np.array(x0, dtype=float)
    for _ in range(max_iter + 1):
        g = p.grad(x)
        if not np.all(np.isfinite(g)):
            return None
        if np.linalg.norm(g) <= tol:
            return x
        try:
            step = np.linalg.solve(p.hess(x), g)
        except np.linalg.LinAlgError:
            return None
        x = x - step
    return None


def find_critical_points(
    p: PotentialSpec,
    seeds: Sequence[Sequence[float]],
    newton_tol: float = NEWTON_TOL,
    degeneracy_tol: float = DEGENERACY_TOL,
    max_iter: int = MAX_NEWTON,
    merge_radius: float = MERGE_RADIUS,
) -> list[CriticalPoint]:
    """Newton-refine each seed on grad U = 0 and classify the limits.

    Seeds that fail to converge are dropped with a warning; duplicates within
    ``merge_radius`` are merged.
    """
    found: list[np.ndarray] = []
    for s in seeds:
        s = np.asarray(s, dtype=float)
        if s.shape != (p.dimension,) or not np.all(np.isfinite(s)):
            raise PreconditionError(f"bad seed {s!r}")
        x = _newton(p, s, newton_tol, max_iter)
        if x is None:
            warnings.warn(f"Newton did not converge from seed {s.tolist()}", RuntimeWarning)
            continue
        if any(np.linalg.norm(x - y) <= merge_radius for y in found):
            continue
        found.append(x)
    crits = []
    for x in found:
        eigs = np.linalg.eigvalsh(p.hess(x))
        kind = classify(eigs, degeneracy_tol)
        crits.append(CriticalPoint(x, kind, np.sort(eigs), float(p.U(x))))
    return crits


# ---------------------------------------------------------------------------
# landscape


@dataclass(frozen=True)
class Landscape:
    potential: PotentialSpec
    m1: CriticalPoint
    m2: CriticalPoint
    gates: tuple[CriticalPoint, ...]
    h1: float
    h2: float
    H: float

    @property
    def barrier(self) -> float:
        return self.H - self.h1

    def to_dict(self) -> dict:
        return {
            "potential": {"name": self.potential.name, "params": _jsonable(self.potential.params)},
            "m1": self.m1.to_dict(),
            "m2": self.m2.to_dict(),
            "gates": [g.to_dict() for g in self.gates],
            "h1": self.h1,
            "h2": self.h2,
            "H": self.H,
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _loc_key(c: CriticalPoint):
    return tuple(np.round(c.location, 9))


def gate_resolution(box, saddles: Sequence[CriticalPoint], tau_gate: float, cap: int = 4001) -> int:
    """Nodes per axis so that the sublevel neck of width ~sqrt(2 tau/lambda) is resolved."""
    lam = max(float(np.max(np.abs(s.hessian_eigenvalues))) for s in saddles)
    h = 0.5 * math.sqrt(2.0 * tau_gate / lam)
    width = max(b - a for a, b in box)
    return int(min(cap, max(101, math.ceil(width / h) + 1)))


def _sublevel_connects(U: np.ndarray, level: float, i1, i2) -> bool:
    lab, _ = ndimage.label(U < level, structure=np.ones((3, 3), dtype=bool))
    return lab[i1] != 0 and lab[i1] == lab[i2]


def build_landscape(
    p: PotentialSpec,
    crits: Sequence[CriticalPoint],
    box=None,
    tau_gate: float = TAU_GATE,
    resolution: int | None = None,
    declared_gates: Sequence[CriticalPoint] | None = None,
) -> Landscape:
    """Identify the two wells and the gates between them.

    For d = 2 a saddle is a gate when the sublevel set just below its height
    separates the wells while the one just above joins them (flood fill on a
    grid). In other dimensions the gates must be declared.
    """
    minima = [c for c in crits if c.kind == "minimum"]
    saddles = [c for c in crits if c.kind == "saddle"]
    if len(minima) != 2:
        raise NotDoubleWell(f"expected 2 minima, found {len(minima)}")
    # m1 is the shallower well; ties broken by location so the result is order free
    a, b = sorted(minima, key=lambda c: (-c.value, _loc_key(c)))
    if abs(a.value - b.value) <= 1e-12:
        a, b = sorted(minima, key=_loc_key)
    m1, m2 = a, b

    if declared_gates is not None:
        gates = sorted(declared_gates, key=_loc_key)
        if not gates or any(g.kind != "saddle" for g in gates):
            raise NoGate("declared gates must be a nonempty list of saddles")
    else:
        if p.dimension != 2:
            raise DimensionUnsupported("gate search by flood fill needs d = 2")
        if not saddles:
            raise NoGate("no saddle points supplied")
        box = box or p.box
        if box is None:
            raise PreconditionError("gate search needs a bounding box")
        n = resolution or gate_resolution(box, saddles, tau_gate)
        xs = np.linspace(box[0][0], box[0][1], n)
        ys = np.linspace(box[1][0], box[1][1], n)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        Ug = p.U(np.stack([X, Y], axis=-1))

        def node(c):
            return (int(np.argmin(np.abs(xs - c.location[0]))), int(np.argmin(np.abs(ys - c.location[1]))))

        i1, i2 = node(m1), node(m2)
        passing = []
        for s in saddles:
            below = _sublevel_connects(Ug, s.value - tau_gate, i1, i2)
            above = _sublevel_connects(Ug, s.value + tau_gate, i1, i2)
            if not below and above:
                passing.append(s)
        if not passing:
            raise NoGate("no saddle passes the sublevel connectivity test")
        Hmin = min(s.value for s in passing)
        gates = sorted([s for s in passing if abs(s.value - Hmin) <= 1e-10], key=_loc_key)
    H = min(g.value for g in gates)
    if not H > m1.value >= m2.value:
        raise NotDoubleWell("gate height must exceed both well depths")
    return Landscape(p, m1, m2, tuple(gates), m1.value, m2.value, H)


def landscape_from_potential(p: PotentialSpec, **kw) -> Landscape:
    """Convenience: critical points from the potential's own seeds, then gates."""
    crits = find_critical_points(p, p.seeds)
    return build_landscape(p, crits, **kw)


# ---------------------------------------------------------------------------
# structural assumptions


@dataclass
class AssumptionReport:
    radial_growth_min: list[float]
    laplacian_growth_min: list[float]
    shell_scales: list[float]
    z_values: dict
    critical_points: list[dict]
    flags: dict
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return _jsonable(self.__dict__)


def _box_boundary_points(box, n: int, scale: float = 1.0) -> np.ndarray:
    box = np.asarray(box, dtype=float) * scale
    d = box.shape[0]
    if d == 1:
        return box[0][:, None]
    pts = []
    t = np.linspace(0.0, 1.0, n)
    for k in range(d):
        for side in (0, 1):
            others = [i for i in range(d) if i != k]
            grids = np.meshgrid(*[box[i, 0] + t * (box[i, 1] - box[i, 0]) for i in others], indexing="ij")
            face = np.empty(grids[0].shape + (d,))
            for i, g in zip(others, grids):
                face[..., i] = g
            face[..., k] = box[k, side]
            pts.append(face.reshape(-1, d))
    return np.concatenate(pts)


def check_assumptions(
    p: PotentialSpec,
    box,
    n_samples: int = 64,
    seeds_per_axis: int = 9,
    epsilons: Sequence[float] = (1.0, 0.1),
) -> AssumptionReport:
    """Advisory numerical evidence for the growth, critical-point and gate assumptions.

    Raises PreconditionError when a critical point is found outside ``box``.
    """
    box = np.asarray(box, dtype=float)
    d = p.dimension
    notes = []
    # growth of the radial derivative and of |grad U| - 2 lap U on expanding shells
    scales = [2.0**k for k in range(9)]
    radial, lapl = [], []
    for s in scales:
        pts = _box_boundary_points(box, n_samples, s)
        pts = pts[np.linalg.norm(pts, axis=1) > 0]
        g = p.grad(pts)
        r = np.einsum("ij,ij->i", pts / np.linalg.norm(pts, axis=1, keepdims=True), g)
        q = np.linalg.norm(g, axis=1) - 2.0 * p.laplacian(pts)
        radial.append(float(np.min(r)))
        lapl.append(float(np.min(q)))

    def growing(seq):
        # the limits in question are asymptotic: judge the outer shells only
        tail = seq[-3:]
        return all(b > a for a, b in zip(tail, tail[1:])) and tail[-1] > 0

    flag_growth = growing(radial) and growing(lapl)

    # partition function finiteness: Riemann sums on the box and the doubled box
    zvals = {}
    z_ok = True
    for eps in epsilons:
        vals = []
        for s in (1.0, 2.0):
            b = box * s
            n = 201 if d <= 2 else 21
            axes = [np.linspace(lo, hi, n) for lo, hi in b]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            cell = np.prod([(hi - lo) / (n - 1) for lo, hi in b])
            Umin = float(np.min(p.U(mesh)))
            z = float(np.sum(np.exp(-(p.U(mesh) - Umin) / eps)) * cell) * math.exp(-Umin / eps)
            vals.append(z)
        zvals[str(eps)] = vals
        if not all(np.isfinite(vals)) or vals[1] <= 0 or abs(vals[1] - vals[0]) > 0.05 * vals[1]:
            z_ok = False

    # critical points from a seed lattice covering the box and a margin around it
    width = box[:, 1] - box[:, 0]
    outer = np.stack([box[:, 0] - width, box[:, 1] + width], axis=1)
    axes = [np.linspace(lo, hi, seeds_per_axis * 3) for lo, hi in outer]
    seeds = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    crits: list[CriticalPoint] = []
    p2 = True
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            crits = find_critical_points(p, seeds)
    except DegenerateHessian as exc:
        p2 = False
        notes.append(f"degenerate critical point: {exc}")
    for c in crits:
        if np.any(c.location < box[:, 0]) or np.any(c.location > box[:, 1]):
            raise PreconditionError(f"critical point {c.location.tolist()} lies outside the box")
    n_min = sum(c.kind == "minimum" for c in crits)
    if p2 and (not crits or n_min != 2):
        p2 = False
        notes.append(f"found {len(crits)} isolated critical points with {n_min} minima")

    p3 = False
    if p2:
        try:
            build_landscape(p, crits, box=tuple(map(tuple, box)) if d == 2 else None)
            p3 = True
        except (NoGate, NotDoubleWell, DimensionUnsupported) as exc:
            notes.append(f"gate check: {exc}")

    flags = {"P1_P4_growth": flag_growth, "P2": p2, "P3": p3, "P4_Z_finite": z_ok}
    return AssumptionReport(
        radial_growth_min=radial,
        laplacian_growth_min=lapl,
        shell_scales=scales,
        z_values=zvals,
        critical_points=[c.to_dict() for c in crits],
        flags=flags,
        notes=notes,
    )
