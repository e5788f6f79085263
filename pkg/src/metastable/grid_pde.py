"""Equilibrium potentials and capacities on uniform 2D grids.

The generator eps e^{U/eps} div(e^{-U/eps} M grad f) is discretized in
divergence form on a staggered grid.  Discrete flows live on edges; the
gradient ``G`` maps node values to edge differences and the weighted drift
operator

    MM = [[W_x M11,     M12 C],
          [M21 C^T,   W_y M22]]

acts on edge vectors.  ``W_x``/``W_y`` hold e^{-U/eps} at edge midpoints and
``C`` couples the two x-edges and two y-edges of every cell with weight
e^{-U(cell center)/eps}/4.  With the stiffness matrix ``K = G^T MM G`` the
generator is ``L_h = -eps diag(e^{U/eps}) K``.  Replacing M by M^T transposes
MM, so the adjoint of L_h in L^2(mu_h) is the same construction with M^T and
all duality identities hold exactly at the discrete level.

Weights are stored relative to ``e^{-shift/eps}`` with shift = min U on the
grid; every reported capacity undoes the shift in log space.
"""
from __future__ import annotations

import io
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .errors import (
    MaximumPrincipleViolation,
    NegativeMass,
    NonFiniteWeight,
    PreconditionError,
    ResolutionTooCoarse,
    SolverDivergence,
    StencilNotPositive,
)
from .potential import PotentialSpec
from .spectral import DriftMatrix

OMEGA, REGION_A, REGION_B = 0, 1, 2
SOLVE_RTOL = 1e-10
REFINE_STEPS = 3
MAXPRINCIPLE_TOL = 1e-8


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class Grid2D:
    box: tuple[tuple[float, float], tuple[float, float]]
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 16 or self.ny < 16:
            raise PreconditionError("grids need at least 16 nodes per axis")
        (x0, x1), (y0, y1) = self.box
        hx = (x1 - x0) / (self.nx - 1)
        hy = (y1 - y0) / (self.ny - 1)
        if not (hx > 0 and hy > 0) or abs(hx - hy) > 1e-12 * max(hx, hy):
            raise PreconditionError(f"grid spacing must be uniform: hx={hx}, hy={hy}")

    @classmethod
    def from_spacing(cls, center, half_widths, h: float) -> "Grid2D":
        """Grid with spacing ``h`` covering center +- half_widths (widths rounded up)."""
        cx, cy = center
        nxh = int(math.ceil(half_widths[0] / h - 1e-9))
        nyh = int(math.ceil(half_widths[1] / h - 1e-9))
        box = ((cx - nxh * h, cx + nxh * h), (cy - nyh * h, cy + nyh * h))
        return cls(box, 2 * nxh + 1, 2 * nyh + 1)

    @property
    def h(self) -> float:
        return (self.box[0][1] - self.box[0][0]) / (self.nx - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def n_xedges(self) -> int:
        return (self.nx - 1) * self.ny

    @property
    def n_yedges(self) -> int:
        return self.nx * (self.ny - 1)

    @property
    def n_edges(self) -> int:
        return self.n_xedges + self.n_yedges

    @cached_property
    def xs(self) -> np.ndarray:
        return np.linspace(self.box[0][0], self.box[0][1], self.nx)

    @cached_property
    def ys(self) -> np.ndarray:
        return np.linspace(self.box[1][0], self.box[1][1], self.ny)

    @cached_property
    def nodes(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.stack([X, Y], axis=-1)

    @cached_property
    def xedge_mid(self) -> np.ndarray:
        n = self.nodes
        return 0.5 * (n[1:, :] + n[:-1, :])

    @cached_property
    def yedge_mid(self) -> np.ndarray:
        n = self.nodes
        return 0.5 * (n[:, 1:] + n[:, :-1])

    @cached_property
    def cell_centers(self) -> np.ndarray:
        n = self.nodes
        return 0.25 * (n[1:, 1:] + n[:-1, 1:] + n[1:, :-1] + n[:-1, :-1])

    def node_index(self, point) -> tuple[int, int]:
        i = int(round((point[0] - self.box[0][0]) / self.h))
        j = int(round((point[1] - self.box[1][0]) / self.h))
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise PreconditionError(f"point {point} outside the grid")
        return i, j

    def refined(self) -> "Grid2D":
        return Grid2D(self.box, 2 * self.nx - 1, 2 * self.ny - 1)

    @cached_property
    def gradient(self) -> sp.csr_matrix:
        """Edge differences (f_head - f_tail)/h; x-edges first, then y-edges."""
        nx, ny, h = self.nx, self.ny, self.h
        idx = np.arange(self.n_nodes).reshape(nx, ny)
        tail_x, head_x = idx[:-1, :].ravel(), idx[1:, :].ravel()
        tail_y, head_y = idx[:, :-1].ravel(), idx[:, 1:].ravel()
        ne_x = self.n_xedges
        rows = np.concatenate([np.arange(ne_x), np.arange(ne_x), ne_x + np.arange(self.n_yedges), ne_x + np.arange(self.n_yedges)])
        cols = np.concatenate([head_x, tail_x, head_y, tail_y])
        vals = np.concatenate([np.ones(ne_x), -np.ones(ne_x), np.ones(self.n_yedges), -np.ones(self.n_yedges)]) / h
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_edges, self.n_nodes))

    @cached_property
    def cell_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(x-edge index, y-edge index, cell index) for the 4 pairs of every cell."""
        nx, ny = self.nx, self.ny
        ci, cj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
        ci, cj = ci.ravel(), cj.ravel()
        cell = ci * (ny - 1) + cj
        xe_bottom = ci * ny + cj
        xe_top = ci * ny + cj + 1
        ye_left = ci * (ny - 1) + cj
        ye_right = (ci + 1) * (ny - 1) + cj
        xs = np.concatenate([xe_bottom, xe_bottom, xe_top, xe_top])
        ys = np.concatenate([ye_left, ye_right, ye_left, ye_right])
        cs = np.concatenate([cell, cell, cell, cell])
        return xs, ys, cs


# ---------------------------------------------------------------------------
# region masks and fields


@dataclass(frozen=True)
class RegionMask:
    grid: Grid2D
    labels: np.ndarray  # (nx, ny) int8 in {OMEGA, REGION_A, REGION_B}

    def __post_init__(self):
        lab = self.labels
        if lab.shape != self.grid.shape:
            raise PreconditionError("mask shape does not match grid")
        four = ndimage.generate_binary_structure(2, 1)
        for code, name in ((REGION_A, "A"), (REGION_B, "B")):
            sel = lab == code
            if not sel.any():
                raise PreconditionError(f"region {name} is empty")
            if sel[0, :].any() or sel[-1, :].any() or sel[:, 0].any() or sel[:, -1].any():
                raise PreconditionError(f"region {name} touches the box boundary")
            if ndimage.label(sel, structure=four)[1] != 1:
                raise PreconditionError(f"region {name} is not connected")
        if ndimage.label(lab == OMEGA, structure=four)[1] != 1:
            raise PreconditionError("Omega is not connected")

    @property
    def A(self) -> np.ndarray:
        return self.labels == REGION_A

    @property
    def B(self) -> np.ndarray:
        return self.labels == REGION_B

    @property
    def omega(self) -> np.ndarray:
        return self.labels == OMEGA

    def swapped(self) -> "RegionMask":
        lab = self.labels.copy()
        lab[self.labels == REGION_A] = REGION_B
        lab[self.labels == REGION_B] = REGION_A
        return RegionMask(self.grid, lab)


def ball_mask(grid: Grid2D, center_a, radius_a: float, center_b, radius_b: float) -> RegionMask:
    """A and B as the grid nodes within closed balls around the given centers."""
    pts = grid.nodes
    lab = np.zeros(grid.shape, dtype=np.int8)
    da = np.linalg.norm(pts - np.asarray(center_a, dtype=float), axis=-1)
    db = np.linalg.norm(pts - np.asarray(center_b, dtype=float), axis=-1)
    tol = 1e-9 * grid.h
    lab[da <= radius_a + tol] = REGION_A
    if np.any((db <= radius_b + tol) & (lab == REGION_A)):
        raise PreconditionError("balls A and B overlap")
    lab[db <= radius_b + tol] = REGION_B
    return RegionMask(grid, lab)


@dataclass(frozen=True)
class GridField:
    grid: Grid2D
    values: np.ndarray  # (nx, ny)
    name: str = "field"

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise PreconditionError("field shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise PreconditionError(f"field {self.name} has non-finite entries")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def at(self, point) -> float:
        return float(self.values[self.grid.node_index(point)])

    def interp(self, point) -> float:
        """Bilinear interpolation."""
        g = self.grid
        fx = (point[0] - g.box[0][0]) / g.h
        fy = (point[1] - g.box[1][0]) / g.h
        i = min(max(int(math.floor(fx)), 0), g.nx - 2)
        j = min(max(int(math.floor(fy)), 0), g.ny - 2)
        tx, ty = fx - i, fy - j
        v = self.values
        return float(
            (1 - tx) * (1 - ty) * v[i, j] + tx * (1 - ty) * v[i + 1, j] + (1 - tx) * ty * v[i, j + 1] + tx * ty * v[i + 1, j + 1]
        )

    def with_values(self, values, name=None) -> "GridField":
        return GridField(self.grid, np.asarray(values, dtype=float).reshape(self.grid.shape), name or self.name)

    def boundary_class_defect(self, mask: RegionMask, a: float, b: float) -> float:
        """max deviation from the constants a on A and b on B."""
        return float(max(np.max(np.abs(self.values[mask.A] - a)), np.max(np.abs(self.values[mask.B] - b))))


@dataclass(frozen=True)
class GridFlow:
    """Edge flow; physical value = ``scale * values``.

    ``values`` are expressed with the shifted weights of the owning operators,
    and ``scale`` carries eps/Z and the weight shift.
    """

    grid: Grid2D
    values: np.ndarray  # (n_edges,)
    scale: float
    name: str = "flow"

    def __post_init__(self):
        if self.values.shape != (self.grid.n_edges,):
            raise PreconditionError("flow size does not match grid edges")
        if not np.all(np.isfinite(self.values)):
            raise PreconditionError(f"flow {self.name} has non-finite entries")

    def _check(self, other: "GridFlow"):
        if other.grid != self.grid or not math.isclose(other.scale, self.scale, rel_tol=1e-14):
            raise PreconditionError("flows live on different grids or scales")

    def __add__(self, other: "GridFlow") -> "GridFlow":
        self._check(other)
        return GridFlow(self.grid, self.values + other.values, self.scale)

    def __sub__(self, other: "GridFlow") -> "GridFlow":
        self._check(other)
        return GridFlow(self.grid, self.values - other.values, self.scale)

    def __mul__(self, c: float) -> "GridFlow":
        return GridFlow(self.grid, c * self.values, self.scale, self.name)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFlow":
        return self * -1.0

    @property
    def physical(self) -> np.ndarray:
        return self.scale * self.values

    def outflow(self) -> np.ndarray:
        """Net physical outflow from every node cell (faces of length h), shape (nx, ny)."""
        g = self.grid
        out = -(g.h**2) * (g.gradient.T @ self.values) * self.scale
        return out.reshape(g.shape)

    def flux_out_of(self, region: np.ndarray) -> float:
        """Physical flux leaving ``region``; only cut edges contribute."""
        return float(np.sum(self.outflow()[region]))

    def feasibility(self, mask: RegionMask, target: float) -> dict:
        """Divergence defect on Omega and flux defect through the boundary of A.

        Both are relative to ``h * max |phi|``, the largest single-face flux.
        """
        ref = self.grid.h * float(np.max(np.abs(self.physical))) if self.values.size else 0.0
        ref = ref if ref > 0 else 1.0
        div = float(np.max(np.abs(self.outflow()[mask.omega])))
        flux = self.flux_out_of(mask.A)
        return {
            "max_div": div,
            "flux": flux,
            "flux_defect": abs(flux - target),
            "scale": ref,
            "rel_div": div / ref,
            "rel_flux": abs(flux - target) / ref,
        }


# ---------------------------------------------------------------------------
# operators


@dataclass
class GridOperators:
    grid: Grid2D
    potential: PotentialSpec
    drift: DriftMatrix
    epsilon: float
    shift: float
    node_weight: np.ndarray  # e^{-(U - shift)/eps} at nodes, flat
    MM: sp.csr_matrix  # weighted M on edges
    K: sp.csr_matrix  # G^T MM G
    U_nodes: np.ndarray
    _s_lu: object = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return self.grid.h

    @cached_property
    def SS(self) -> sp.csr_matrix:
        """Symmetric part of MM: the discrete S-weight on edges."""
        return (0.5 * (self.MM + self.MM.T)).tocsr()

    @cached_property
    def MM_t(self) -> sp.csr_matrix:
        return self.MM.T.tocsr()

    @cached_property
    def K_t(self) -> sp.csr_matrix:
        return self.K.T.tocsr()

    @cached_property
    def L(self) -> sp.csr_matrix:
        """Generator matrix L_h."""
        return (sp.diags(-self.epsilon / self.node_weight) @ self.K).tocsr()

    @cached_property
    def L_star(self) -> sp.csr_matrix:
        """Adjoint of L_h in L^2(mu_h), assembled as D^{-1} L_h^T D."""
        D = sp.diags(self.node_weight)
        Dinv = sp.diags(1.0 / self.node_weight)
        return (Dinv @ self.L.T @ D).tocsr()

    @property
    def measure(self) -> np.ndarray:
        """Shifted node measure e^{-(U - shift)/eps} h^2."""
        return self.node_weight * self.h**2

    def log_flow_scale(self, Z: float) -> float:
        """log of eps/Z * e^{-shift/eps}: converts shifted edge sums to physical ones."""
        return math.log(self.epsilon) - math.log(Z) - self.shift / self.epsilon

    def flow_scale(self, Z: float) -> float:
        return math.exp(self.log_flow_scale(Z))

    def solve_SS(self, v: np.ndarray) -> np.ndarray:
        if self.drift.S[0, 1] == 0.0:
            return v / self.SS.diagonal()
        if self._s_lu is None:
            self._s_lu = spla.splu(self.SS.tocsc())
        return self._s_lu.solve(v)

    def pairing(self, f: np.ndarray, g: np.ndarray) -> float:
        """<f, L_h g> in L^2(mu_h), shifted units."""
        return float(np.dot(f * self.measure, self.L @ g))

    def dirichlet_pairing(self, f: np.ndarray, g: np.ndarray, which: str = "M") -> float:
        """h^2 (G f)^T MM (G g) with MM built from M, M^T or S."""
        G = self.grid.gradient
        op = {"M": self.MM, "Mt": self.MM_t, "S": self.SS}[which]
        return float(self.h**2 * (G @ f) @ (op @ (G @ g)))


def _weights(p: PotentialSpec, pts: np.ndarray, shift: float, eps: float, what: str) -> np.ndarray:
    w = np.exp(-(p.U(pts) - shift) / eps)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise NonFiniteWeight(f"{what} weights under/overflow at eps={eps}; shrink the box")
    return w


def discretize_generator(grid: Grid2D, p: PotentialSpec, drift: DriftMatrix, epsilon: float) -> GridOperators:
    """Assemble L_h and its adjoint for eps e^{U/eps} div(e^{-U/eps} M grad .)."""
    if epsilon <= 0:
        raise PreconditionError("epsilon must be positive")
    if p.dimension != 2 or drift.M.shape != (2, 2):
        raise PreconditionError("grid operators are two-dimensional")
    if grid.h > math.sqrt(epsilon) / 4 * (1 + 1e-12):
        raise ResolutionTooCoarse(f"h = {grid.h:.4g} exceeds sqrt(eps)/4 = {math.sqrt(epsilon) / 4:.4g}")
    U_nodes = p.U(grid.nodes).ravel()
    shift = float(U_nodes.min())
    wn = _weights(p, grid.nodes, shift, epsilon, "node").ravel()
    wx = _weights(p, grid.xedge_mid, shift, epsilon, "edge").ravel()
    wy = _weights(p, grid.yedge_mid, shift, epsilon, "edge").ravel()
    wc = _weights(p, grid.cell_centers, shift, epsilon, "cell").ravel()
    M = drift.M
    nxe, nye = grid.n_xedges, grid.n_yedges
    xs, ys, cs = grid.cell_pairs
    C = sp.csr_matrix((0.25 * wc[cs], (xs, ys)), shape=(nxe, nye))
    MM = sp.bmat(
        [[sp.diags(M[0, 0] * wx), M[0, 1] * C], [M[1, 0] * C.T, sp.diags(M[1, 1] * wy)]],
        format="csr",
    )
    S = drift.S
    if S[0, 1] != 0.0:
        # Gershgorin certificate that the symmetric edge form is positive definite
        Cabs = abs(S[0, 1]) * C
        margin_x = S[0, 0] * wx - np.asarray(Cabs.sum(axis=1)).ravel()
        margin_y = S[1, 1] * wy - np.asarray(Cabs.sum(axis=0)).ravel()
        if margin_x.min() <= 0 or margin_y.min() <= 0:
            raise StencilNotPositive("off-diagonal part of S too large for the edge stencil")
    G = grid.gradient
    K = (G.T @ MM @ G).tocsr()
    return GridOperators(grid, p, drift, float(epsilon), shift, wn, MM, K, U_nodes)


# ---------------------------------------------------------------------------
# equilibrium potentials


def _dirichlet_solve(K: sp.csr_matrix, free: np.ndarray, fixed_values: np.ndarray, rhs_free=None, lu=None, trans=False):
    """Solve K[free, :] u = rhs_free with u prescribed off ``free``."""
    fixed = ~free
    Kff = K[free][:, free]
    b = -(K[free][:, fixed] @ fixed_values[fixed])
    if rhs_free is not None:
        b = b + rhs_free
    if lu is None:
        lu = spla.splu(Kff.tocsc())
    x = lu.solve(b)
    bn = np.linalg.norm(b)
    bn = bn if bn > 0 else 1.0
    rel = np.inf
    for _ in range(REFINE_STEPS):
        r = b - Kff @ x
        rel = np.linalg.norm(r) / bn
        if rel <= SOLVE_RTOL or not np.isfinite(rel):
            break
        x = x + lu.solve(r)  # iterative refinement with the same factors
    else:
        rel = np.linalg.norm(b - Kff @ x) / bn
    u = fixed_values.astype(float).copy()
    u[free] = x
    if not np.isfinite(rel) or rel > SOLVE_RTOL:
        raise SolverDivergence(f"relative residual {rel:.3g} above {SOLVE_RTOL}")
    return u, lu


def solve_equilibrium_potential(ops: GridOperators, mask: RegionMask) -> tuple[GridField, GridField]:
    """h (for L_h) and h* (for its adjoint): 1 on A, 0 on B, harmonic on Omega."""
    if mask.grid != ops.grid:
        raise PreconditionError("mask and operators live on different grids")
    free = mask.omega.ravel()
    bc = mask.A.ravel().astype(float)
    h, _ = _dirichlet_solve(ops.K, free, bc)
    h_star, _ = _dirichlet_solve(ops.K_t, free, bc)
    for name, u in (("h", h), ("h*", h_star)):
        lo, hi = float(u.min()), float(u.max())
        if lo < -MAXPRINCIPLE_TOL or hi > 1 + MAXPRINCIPLE_TOL:
            k = int(np.argmax(np.maximum(-u, u - 1)))
            where = ops.grid.nodes.reshape(-1, 2)[k]
            raise MaximumPrincipleViolation(
                f"{name} ranges over [{lo:.3g}, {hi:.3g}]; worst node {where.round(4).tolist()} "
                f"with U = {ops.U_nodes[k]:.3g} (cell Peclet number too large there: refine or shrink the box)"
            )
    g = ops.grid
    return GridField(g, h.reshape(g.shape), "h"), GridField(g, h_star.reshape(g.shape), "h_star")


def mean_hitting_time(ops: GridOperators, target: np.ndarray, f: np.ndarray | None = None) -> GridField:
    """u with L_h u = -f off ``target`` and u = 0 on it (f = 1: mean hitting time)."""
    target = np.asarray(target, dtype=bool).ravel()
    f = np.ones(ops.grid.n_nodes) if f is None else np.asarray(f, dtype=float).ravel()
    rhs = ops.node_weight * f / ops.epsilon
    u, _ = _dirichlet_solve(ops.K, ~target, np.zeros(ops.grid.n_nodes), rhs_free=rhs[~target])
    return GridField(ops.grid, u.reshape(ops.grid.shape), "u")


# ---------------------------------------------------------------------------
# capacities


@dataclass
class CapacityReport:
    cap_dirichlet_form: float
    cap_flux: float
    cap_adjoint: float
    cap_adjoint_dirichlet_form: float
    cap_swapped: float | None
    symmetry_defects: dict
    normalization: dict

    @property
    def cap(self) -> float:
        return self.cap_dirichlet_form

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def capacity_from_fields(
    h: GridField,
    h_star: GridField,
    ops: GridOperators,
    mask: RegionMask,
    epsilon: float,
    Z: float,
    swapped: tuple[GridField, GridField] | None = None,
) -> CapacityReport:
    """Capacity by the Dirichlet form of h and by the flux of h (and h*) out of A."""
    if not math.isclose(epsilon, ops.epsilon, rel_tol=1e-14):
        raise PreconditionError("epsilon differs from the operators'")
    c = ops.flow_scale(Z)
    hf, hs = h.flat, h_star.flat
    A = mask.A.ravel()
    cap_dir = c * ops.dirichlet_pairing(hf, hf, "S")
    cap_flux = c * ops.h**2 * float(np.sum((ops.K @ hf)[A]))
    cap_adj = c * ops.h**2 * float(np.sum((ops.K_t @ hs)[A]))
    cap_adj_dir = c * ops.dirichlet_pairing(hs, hs, "S")
    cap_sw = None
    defects = {
        "cap_vs_adjoint": abs(cap_dir - cap_adj) / cap_dir,
        "dirichlet_vs_flux": abs(cap_dir - cap_flux) / cap_dir,
    }
    if swapped is not None:
        cap_sw = c * ops.dirichlet_pairing(swapped[0].flat, swapped[0].flat, "S")
        defects["swap"] = abs(cap_dir - cap_sw) / cap_dir
    return CapacityReport(
        cap_dirichlet_form=cap_dir,
        cap_flux=cap_flux,
        cap_adjoint=cap_adj,
        cap_adjoint_dirichlet_form=cap_adj_dir,
        cap_swapped=cap_sw,
        symmetry_defects=defects,
        normalization={"epsilon": epsilon, "Z": Z, "h": ops.h, "nx": ops.grid.nx, "ny": ops.grid.ny},
    )


def capacity(ops: GridOperators, mask: RegionMask, Z: float, with_swap: bool = True):
    """Solve both equilibrium potentials and report all capacity evaluations."""
    h, hs = solve_equilibrium_potential(ops, mask)
    sw = solve_equilibrium_potential(ops, mask.swapped()) if with_swap else None
    return capacity_from_fields(h, hs, ops, mask, ops.epsilon, Z, swapped=sw), h, hs


# ---------------------------------------------------------------------------
# equilibrium measure and the hitting-time identity


@dataclass(frozen=True)
class DiscreteMeasure:
    grid: Grid2D
    nodes: np.ndarray  # flat node indices
    weights: np.ndarray
    clipped_mass: float

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def locations(self) -> np.ndarray:
        return self.grid.nodes.reshape(-1, 2)[self.nodes]

    def integrate(self, f: np.ndarray) -> float:
        return float(np.dot(self.weights, np.asarray(f).ravel()[self.nodes]))


def equilibrium_measure(h_star: GridField, ops: GridOperators, mask: RegionMask, cap: float, Z: float) -> DiscreteMeasure:
    """Normalized flux of e^{-U/eps} M^T grad h* into A, as weights on A's nodes."""
    if cap <= 0:
        raise PreconditionError("capacity must be positive")
    A = mask.A.ravel()
    flux = ops.h**2 * (ops.K_t @ h_star.flat)
    w = ops.flow_scale(Z) * flux / cap
    idx = np.flatnonzero(A & (np.abs(w) > 0))
    w = w[idx]
    if w.size and w.min() < -1e-6:
        raise NegativeMass(f"equilibrium weight {w.min():.3g} < -1e-6; refine the grid")
    neg = w < 0
    clipped = float(-w[neg].sum())
    if np.any(w < -1e-10):
        warnings.warn(f"clipping negative equilibrium weights (mass {clipped:.3g})", RuntimeWarning)
    w = np.where(neg, 0.0, w)
    return DiscreteMeasure(ops.grid, idx, w, clipped)


def check_prop3(f, mask: RegionMask, ops: GridOperators, h_star: GridField, nu: DiscreteMeasure, epsilon: float, Z: float, cap: float):
    """Both sides of E_nu[int_0^{H_B} f(X_s) ds] = (1/cap) int h* f dmu.

    Returns (lhs, rhs, defect) with defect = |lhs - rhs| / |rhs| (absolute when rhs = 0).
    """
    fv = f.flat if isinstance(f, GridField) else np.asarray(f, dtype=float).ravel()
    if not np.all(np.isfinite(fv)):
        raise PreconditionError("f must be bounded")
    u = mean_hitting_time(ops, mask.B, fv)
    lhs = nu.integrate(u.flat)
    log_c = -math.log(Z) - ops.shift / epsilon
    rhs = math.exp(log_c) * float(np.sum(h_star.flat * fv * ops.measure)) / cap
    defect = abs(lhs - rhs) / abs(rhs) if rhs != 0 else abs(lhs - rhs)
    return lhs, rhs, defect


def laplace_mass_ratio(h_star: GridField, ops: GridOperators, well) -> float:
    """sum h* e^{-U/eps} h^2 divided by the Gaussian mass of the well ``well``."""
    eps = ops.epsilon
    det = float(np.prod(well.hessian_eigenvalues))
    log_num = math.log(float(np.sum(h_star.flat * ops.measure))) - ops.shift / eps
    log_den = math.log(2 * math.pi * eps) - well.value / eps - 0.5 * math.log(det)
    return math.exp(log_num - log_den)


def pointwise_bound_constant(h: GridField, ops: GridOperators, landscape, mask: RegionMask) -> float:
    """max of h(y) eps^d e^{(H - U(y))/eps} over grid nodes of the second well below H."""
    eps = ops.epsilon
    U = ops.U_nodes.reshape(ops.grid.shape)
    lab, _ = ndimage.label(U < landscape.H, structure=ndimage.generate_binary_structure(2, 1))
    i2 = ops.grid.node_index(landscape.m2.location)
    well2 = (lab == lab[i2]) & ~mask.B
    vals = h.values[well2] * eps**2 * np.exp((landscape.H - U[well2]) / eps)
    return float(vals.max())


# ---------------------------------------------------------------------------
# export


GRDF_MAGIC = b"GRDF"


def field_to_csv(fld: GridField) -> str:
    buf = io.StringIO()
    buf.write("x,y,value\n")
    pts = fld.grid.nodes.reshape(-1, 2)
    for (x, y), v in zip(pts, fld.flat):
        buf.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
    return buf.getvalue()


def field_to_bytes(fld: GridField) -> bytes:
    """32-byte header (magic, nx, ny as uint16, x0, x1, y0 as float64) + row-major float64.

    y1 is implied by the uniform spacing: y1 = y0 + (ny - 1)(x1 - x0)/(nx - 1).
    """
    g = fld.grid
    if g.nx > 0xFFFF or g.ny > 0xFFFF:
        raise PreconditionError("grid too large for the binary header")
    header = GRDF_MAGIC + struct.pack("<HHddd", g.nx, g.ny, g.box[0][0], g.box[0][1], g.box[1][0])
    assert len(header) == 32
    return header + np.ascontiguousarray(fld.values, dtype="<f8").tobytes()


def field_from_bytes(data: bytes, name: str = "field") -> GridField:
    if data[:4] != GRDF_MAGIC:
        raise ValueError("not a GRDF file")
    nx, ny, x0, x1, y0 = struct.unpack("<HHddd", data[4:32])
    h = (x1 - x0) / (nx - 1)
    grid = Grid2D(((x0, x1), (y0, y0 + (ny - 1) * h)), nx, ny)
    vals = np.frombuffer(data[32:], dtype="<f8")
    if vals.size != nx * ny:
        raise ValueError("payload size does not match header")
    return GridField(grid, vals.reshape(nx, ny).copy(), name)


def report_json(report: CapacityReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)
