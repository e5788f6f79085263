"""Discrete Dirichlet and Thomson principles for non-reversible diffusions.

Flows are ``GridFlow`` edge vectors built from the operators of
:mod:`metastable.grid_pde`, so divergences and fluxes use exactly the stencil
of the capacity solves.  Upper bounds come from pairs (f, phi) with f = 1 on A,
0 on B and phi divergence-free with zero flux; lower bounds from pairs with
f = 0 on A and B and phi of unit flux out of A.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage
from scipy.special import ndtr

from .errors import DisconnectedWells, InfeasibleFlow, PreconditionError, ResolutionTooCoarse, ZeroEnergy
from .grid_pde import Grid2D, GridField, GridFlow, GridOperators, RegionMask
from .potential import Landscape, PotentialSpec
from .spectral import SaddleAnalysis

WARN_REL = 1e-8
FAIL_REL = 1e-6
CLASS_TOL = 1e-12
MIN_K = 1.0


def energy_norm(phi: GridFlow, ops: GridOperators) -> float:
    """<phi, phi> = (Z/eps) sum phi . S^{-1} phi e^{U/eps} h^2 over edges.

    With the shifted edge weights this reduces to scale * h^2 * v^T SS^{-1} v,
    so the value of Psi_h equals the Dirichlet-form capacity.
    """
    if phi.grid != ops.grid:
        raise PreconditionError("flow and operators live on different grids")
    v = phi.values
    if not np.any(v):
        return 0.0
    return float(phi.scale * ops.h**2 * np.dot(v, ops.solve_SS(v)))


def make_phi(f: GridField, which: str, ops: GridOperators, Z: float) -> GridFlow:
    """Psi_f = e^{-V} S grad f, Phi_f = e^{-V} M^T grad f, PhiStar_f = e^{-V} M grad f."""
    op = {"Psi": ops.SS, "Phi": ops.MM_t, "PhiStar": ops.MM}.get(which)
    if op is None:
        raise ValueError(f"unknown flow kind {which!r}")
    return GridFlow(ops.grid, op @ (ops.grid.gradient @ f.flat), ops.flow_scale(Z), which)


def _digest(f: GridField, phi: GridFlow, mask: RegionMask, epsilon: float) -> str:
    hsh = hashlib.sha256()
    hsh.update(np.ascontiguousarray(f.values).tobytes())
    hsh.update(np.ascontiguousarray(phi.values).tobytes())
    hsh.update(np.float64(phi.scale).tobytes())
    hsh.update(np.ascontiguousarray(mask.labels).tobytes())
    hsh.update(np.float64(epsilon).tobytes())
    return hsh.hexdigest()


@dataclass(frozen=True)
class BoundCertificate:
    kind: str  # "upper" or "lower"
    value: float
    energy: float
    feasibility: dict
    status: str  # "feasible", "warn" or "infeasible"
    inputs_digest: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _feasibility(f: GridField, phi: GridFlow, mask: RegionMask, target: float, a: float, b: float, strict: bool):
    feas = phi.feasibility(mask, target)
    feas["boundary_defect"] = f.boundary_class_defect(mask, a, b)
    worst = max(feas["rel_div"], feas["rel_flux"])
    if worst > FAIL_REL:
        status = "infeasible"
        if strict:
            raise InfeasibleFlow(f"flow defect {worst:.3g} (relative) exceeds {FAIL_REL}")
    elif worst > WARN_REL:
        status = "warn"
        warnings.warn(f"flow defect {worst:.3g} above warning level {WARN_REL}", RuntimeWarning)
    else:
        status = "feasible"
    return feas, status


def dirichlet_bound(f: GridField, phi: GridFlow, ops: GridOperators, mask: RegionMask, Z: float, strict: bool = True) -> BoundCertificate:
    """Upper bound <Phi_f - phi, Phi_f - phi> for f in C_{1,0}, phi in F^(0).

    With ``strict=False`` infeasible flows are evaluated anyway and flagged.
    """
    if f.boundary_class_defect(mask, 1.0, 0.0) > CLASS_TOL:
        raise PreconditionError("f must equal 1 on A and 0 on B")
    feas, status = _feasibility(f, phi, mask, 0.0, 1.0, 0.0, strict)
    e = energy_norm(make_phi(f, "Phi", ops, Z) - phi, ops)
    return BoundCertificate("upper", e, e, feas, status, _digest(f, phi, mask, ops.epsilon))


def thomson_bound(f: GridField, phi: GridFlow, ops: GridOperators, mask: RegionMask, Z: float, strict: bool = True) -> BoundCertificate:
    """Lower bound 1 / <Phi_f - phi, Phi_f - phi> for f in C_{0,0}, phi in F^(1)."""
    if f.boundary_class_defect(mask, 0.0, 0.0) > CLASS_TOL:
        raise PreconditionError("f must vanish on A and B")
    feas, status = _feasibility(f, phi, mask, 1.0, 0.0, 0.0, strict)
    e = energy_norm(make_phi(f, "Phi", ops, Z) - phi, ops)
    if e < 1e-300:
        raise ZeroEnergy("energy of the lower-bound pair vanishes")
    return BoundCertificate("lower", 1.0 / e, e, feas, status, _digest(f, phi, mask, ops.epsilon))


def prop1_optimizer(h: GridField, h_star: GridField, ops: GridOperators, Z: float) -> tuple[GridField, GridFlow]:
    """f = (h + h*)/2 and phi = Phi_f - Psi_h."""
    f = h.with_values(0.5 * (h.values + h_star.values), "prop1_f")
    return f, make_phi(f, "Phi", ops, Z) - make_phi(h, "Psi", ops, Z)


def prop2_optimizer(h: GridField, h_star: GridField, cap: float, ops: GridOperators, Z: float) -> tuple[GridField, GridFlow]:
    """f = (h - h*)/(2 cap) and phi = Phi_f - Psi_{h/cap}."""
    f = h.with_values((h.values - h_star.values) / (2 * cap), "prop2_f")
    return f, make_phi(f, "Phi", ops, Z) - make_phi(h, "Psi", ops, Z) * (1.0 / cap)


# ---------------------------------------------------------------------------
# saddle test functions


def saddle_frame(sa: SaddleAnalysis, landscape: Landscape):
    """Eigenbasis of Hess U(sigma) with e1 (and v, v*) oriented towards m1."""
    w, Q = np.linalg.eigh(sa.L)
    to_m1 = landscape.m1.location - sa.sigma
    if Q[:, 0] @ to_m1 < 0:
        Q[:, 0] = -Q[:, 0]
    v = sa.v if sa.v @ to_m1 > 0 else -sa.v
    vs = sa.v_star if sa.v_star @ to_m1 > 0 else -sa.v_star
    return w, Q, v, vs


def max_pack_K(sa: SaddleAnalysis, landscape: Landscape, epsilon: float, margin: float = 0.95, cap: float = 4.0) -> float:
    """Largest K (at most ``cap``) for which both minima stay outside C_eps.

    The construction asks for K large; on a fixed landscape the wells bound it
    from above, since each minimum must lie in its own component W_i.
    """
    lam, Q, _, _ = saddle_frame(sa, landscape)
    half = np.concatenate([[1.0], np.sqrt(2 * abs(lam[0]) / lam[1:])])
    limit = np.inf
    for m in (landscape.m1, landscape.m2):
        z = np.abs((m.location - sa.sigma) @ Q)
        limit = min(limit, float(np.max(z / half)))
    return min(cap, margin * limit / math.sqrt(epsilon * math.log(1.0 / epsilon)))


def saddle_delta(epsilon: float, K: float) -> float:
    if not 0 < epsilon < 1:
        raise PreconditionError("need 0 < eps < 1 for delta = K sqrt(eps log(1/eps))")
    return K * math.sqrt(epsilon * math.log(1.0 / epsilon))


def _in_box(z: np.ndarray, lam: np.ndarray, delta: float) -> np.ndarray:
    half = np.concatenate([[delta], np.sqrt(2 * abs(lam[0]) / lam[1:]) * delta])
    return np.all(np.abs(z) <= half, axis=-1)


@dataclass
class SaddleTestPack:
    epsilon: float
    K: float
    delta: float
    level: float  # H + lambda_1 delta^2 / 4
    box_half_widths: np.ndarray
    B_eps: np.ndarray
    W1_eps: np.ndarray
    W2_eps: np.ndarray
    X_eps: np.ndarray
    p_eps: GridField
    p_star_eps: GridField
    p_raw: GridField
    p_star_raw: GridField
    q: np.ndarray  # edge vector
    q_star: np.ndarray
    eta_cells: int
    v: np.ndarray
    v_star: np.ndarray
    alpha: float
    alpha_star: float

    def theta(self, which: str, ops: GridOperators, Z: float) -> GridFlow:
        """Theta_q, ThetaStar_q, Theta_{q*}, ThetaStar_{q*} as edge flows."""
        table = {
            "Theta_q": (ops.MM_t, self.q),
            "ThetaStar_q": (ops.MM, self.q),
            "Theta_qstar": (ops.MM_t, self.q_star),
            "ThetaStar_qstar": (ops.MM, self.q_star),
        }
        op, q = table[which]
        return GridFlow(ops.grid, op @ q, ops.flow_scale(Z), which)

    def upper_pair(self, ops: GridOperators, Z: float) -> tuple[GridField, GridFlow]:
        """f = (p + p*)/2 smoothed and phi = (Theta_{q*} - ThetaStar_q)/2."""
        f = self.p_eps.with_values(0.5 * (self.p_eps.values + self.p_star_eps.values), "pack_f")
        phi = (self.theta("Theta_qstar", ops, Z) - self.theta("ThetaStar_q", ops, Z)) * 0.5
        return f, phi

    def region_codes(self) -> GridField:
        """0 = X, 1 = W1, 2 = W2, 3 = B for export."""
        codes = np.zeros(self.p_eps.grid.shape)
        codes[self.W1_eps] = 1
        codes[self.W2_eps] = 2
        codes[self.B_eps] = 3
        return self.p_eps.with_values(codes, "regions")


def _smooth(values: np.ndarray, regions: np.ndarray, fixed: np.ndarray, eta_cells: int) -> np.ndarray:
    """Nearest-neighbor averaging on a shell of width eta_cells around region interfaces."""
    if eta_cells <= 0:
        return values
    edge = np.zeros(regions.shape, dtype=bool)
    edge[:-1, :] |= regions[:-1, :] != regions[1:, :]
    edge[1:, :] |= regions[:-1, :] != regions[1:, :]
    edge[:, :-1] |= regions[:, :-1] != regions[:, 1:]
    edge[:, 1:] |= regions[:, :-1] != regions[:, 1:]
    shell = ndimage.binary_dilation(edge, iterations=eta_cells) & ~fixed
    shell[0, :] = shell[-1, :] = shell[:, 0] = shell[:, -1] = False
    u = values.copy()
    # a 4-point average spreads by about h/sqrt(2) per pass; 2 eta^2 passes reach eta cells
    for _ in range(2 * eta_cells**2):
        avg = 0.25 * (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1))
        u = np.where(shell, avg, u)
    return u


def build_saddle_pack(
    sa: SaddleAnalysis,
    grid: Grid2D,
    landscape: Landscape,
    epsilon: float,
    K: float | None = None,
    eta_cells: int = 2,
    mask: RegionMask | None = None,
) -> SaddleTestPack:
    """Mesoscopic saddle neighborhood, Gaussian test functions and q-flows.

    Nodes in ``mask.A`` / ``mask.B`` are held at 1 / 0 during smoothing so the
    smoothed function stays in the class C_{1,0}.  ``K=None`` picks
    :func:`max_pack_K`.
    """
    if K is None:
        K = max_pack_K(sa, landscape, epsilon)
    if K < MIN_K:
        raise PreconditionError(f"K must be at least {MIN_K}")
    delta = saddle_delta(epsilon, K)
    if grid.h > delta / 8:
        raise ResolutionTooCoarse(f"h = {grid.h:.3g} exceeds delta/8 = {delta / 8:.3g}")
    p = landscape.potential
    lam, Q, v, vs = saddle_frame(sa, landscape)
    level = landscape.H + 0.25 * abs(lam[0]) * delta**2
    X = grid.nodes - sa.sigma
    z = X @ Q
    U = p.U(grid.nodes)
    omega_eps = U < level
    B = _in_box(z, lam, delta) & omega_eps
    rest = omega_eps & ~B
    four = ndimage.generate_binary_structure(2, 1)
    lab, _ = ndimage.label(rest, structure=four)
    i1 = grid.node_index(landscape.m1.location)
    i2 = grid.node_index(landscape.m2.location)
    if lab[i1] == 0 or lab[i2] == 0 or lab[i1] == lab[i2]:
        raise DisconnectedWells("could not separate the wells outside the saddle neighborhood; lower K")
    W1 = lab == lab[i1]
    W2 = lab == lab[i2]
    Xe = ~(W1 | W2 | B)

    def gauss(vec, a):
        return ndtr((X @ vec) * math.sqrt(a / epsilon))

    g = gauss(v, sa.alpha)
    gs = gauss(vs, sa.alpha_star)
    p_raw = np.where(B, g, W1.astype(float))
    ps_raw = np.where(B, gs, W1.astype(float))
    regions = np.select([W1, W2, B], [1, 2, 3], 0)
    fixed = np.zeros(grid.shape, dtype=bool)
    if mask is not None:
        fixed = mask.A | mask.B
    p_s = _smooth(p_raw, regions, fixed, eta_cells)
    ps_s = _smooth(ps_raw, regions, fixed, eta_cells)
    if mask is not None:
        for arr in (p_s, ps_s):
            arr[mask.A] = 1.0
            arr[mask.B] = 0.0
    G = grid.gradient
    Bf = B.ravel().astype(float)
    both = np.abs(G) @ Bf * grid.h > 1.5  # edges with both endpoints in B_eps
    q = np.where(both, G @ g.ravel(), 0.0)
    qs = np.where(both, G @ gs.ravel(), 0.0)
    half = np.concatenate([[delta], np.sqrt(2 * abs(lam[0]) / lam[1:]) * delta])
    return SaddleTestPack(
        epsilon=epsilon,
        K=K,
        delta=delta,
        level=level,
        box_half_widths=half,
        B_eps=B,
        W1_eps=W1,
        W2_eps=W2,
        X_eps=Xe,
        p_eps=GridField(grid, p_s, "p_eps"),
        p_star_eps=GridField(grid, ps_s, "p_star_eps"),
        p_raw=GridField(grid, p_raw, "p_raw"),
        p_star_raw=GridField(grid, ps_raw, "p_star_raw"),
        q=q,
        q_star=qs,
        eta_cells=eta_cells,
        v=v,
        v_star=vs,
        alpha=sa.alpha,
        alpha_star=sa.alpha_star,
    )


def saddle_box_quadrature(
    sa: SaddleAnalysis,
    p: PotentialSpec,
    epsilon: float,
    K: float = 4.0,
    order: int = 24,
    panels: int = 16,
    H: float | None = None,
) -> float:
    """Integral of grad p . M grad p e^{-(U-H)/eps} over C_eps intersected with
    {U < H + lambda_1 delta^2/4}, by composite tensor Gauss-Legendre.

    The gradient is analytic: grad p = exp(-alpha (z.v)^2 / 2 eps) v / C_eps.
    """
    if epsilon > 0.2:
        raise PreconditionError("quadrature is meant for eps <= 0.2")
    delta = saddle_delta(epsilon, K)
    lam, Q = np.linalg.eigh(sa.L)
    d = len(lam)
    H = float(p.U(sa.sigma)) if H is None else H
    level = H + 0.25 * abs(lam[0]) * delta**2
    half = np.concatenate([[delta], np.sqrt(2 * abs(lam[0]) / lam[1:]) * delta])
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    nodes = (0.5 * (edges[1:, None] - edges[:-1, None]) * t + 0.5 * (edges[1:, None] + edges[:-1, None])).ravel()
    weights = (0.5 * (edges[1:, None] - edges[:-1, None]) * w).ravel()
    grids = np.meshgrid(*[nodes * hw for hw in half], indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    wz = np.ones(len(z))
    for k, g in enumerate(np.meshgrid(*[weights * hw for hw in half], indexing="ij")):
        wz *= g.ravel()
    x = sa.sigma + z @ Q.T
    dU = p.U(x) - H
    inside = dU < level - H
    s = x - sa.sigma
    vMv = float(sa.v @ sa.M @ sa.v)
    C = math.sqrt(2 * math.pi * epsilon / sa.alpha)
    integrand = vMv / C**2 * np.exp(-(sa.alpha * (s @ sa.v) ** 2 + dU) / epsilon)
    return float(np.sum(np.where(inside, integrand, 0.0) * wz))


def bl6_target(sa: SaddleAnalysis, epsilon: float) -> float:
    d = sa.dimension
    return (2 * math.pi * epsilon) ** (d / 2 - 1) * sa.omega
