"""Closed-form Eyring-Kramers asymptotics for capacities and transition times.

Everything is assembled in log space and exponentiated last so that small
noise strengths (eps <= 0.02) do not overflow.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyGateList, PreconditionError, QuadratureUnderflow
from .potential import Landscape, PotentialSpec
from .spectral import SaddleAnalysis


@dataclass(frozen=True)
class PartitionFunction:
    value: float
    log_value: float
    method: str
    error_estimate: float | None = None


def log_laplace_z(landscape: Landscape, epsilon: float) -> float:
    """log of sum over wells of (2 pi eps)^{d/2} e^{-h_i/eps} / sqrt(det Hess U(m_i))."""
    d = landscape.potential.dimension
    terms = []
    for m in (landscape.m1, landscape.m2):
        det = float(np.prod(m.hessian_eigenvalues))
        terms.append(0.5 * d * math.log(2 * math.pi * epsilon) - m.value / epsilon - 0.5 * math.log(det))
    return float(np.logaddexp(*terms))


def log_quadrature_z(p: PotentialSpec, box, epsilon: float, nodes: int | Sequence[int] = 600) -> float:
    """log of the tensor-grid Riemann sum of e^{-U/eps} over ``box``."""
    box = np.asarray(box, dtype=float)
    d = box.shape[0]
    n = [nodes] * d if np.isscalar(nodes) else list(nodes)
    axes = [np.linspace(lo, hi, k) for (lo, hi), k in zip(box, n)]
    cell = float(np.prod([(hi - lo) / (k - 1) for (lo, hi), k in zip(box, n)]))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    expo = -p.U(mesh) / epsilon
    top = float(np.max(expo))
    if top < math.log(1e-300):
        raise QuadratureUnderflow("all integrand samples are below 1e-300")
    return top + math.log(float(np.sum(np.exp(expo - top))) * cell)


def partition_function(
    p: PotentialSpec,
    landscape: Landscape,
    epsilon: float,
    method: str = "laplace",
    box=None,
    nodes: int = 600,
) -> PartitionFunction:
    """Z_eps by the two-well Laplace sum or by quadrature over a box.

    When a box is available the other method is evaluated as well and the
    absolute difference is returned as the error estimate.
    """
    if epsilon <= 0:
        raise PreconditionError("epsilon must be positive")
    if method not in ("laplace", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    box = box if box is not None else p.box
    lz = log_laplace_z(landscape, epsilon)
    lq = None
    if method == "quadrature" or box is not None:
        if box is None:
            raise PreconditionError("quadrature needs a bounding box")
        lq = log_quadrature_z(p, box, epsilon, nodes)
    logv = lz if method == "laplace" else lq
    err = None if lq is None else abs(math.exp(lz) - math.exp(lq))
    return PartitionFunction(math.exp(logv), logv, method, err)


@dataclass(frozen=True)
class KramersPrediction:
    epsilon: float
    Z: float
    Z_method: str
    T_eps: float
    omega_sum: float
    cap_asym: float
    mean_hit: float
    reversible_reference: float
    log_T_eps: float
    log_mean_hit: float

    def to_dict(self) -> dict:
        return asdict(self)


def predict(
    landscape: Landscape,
    saddles: Sequence[SaddleAnalysis],
    well_hessian,
    epsilon: float,
    Z: float | None = None,
    log_Z: float | None = None,
    Z_method: str = "laplace",
) -> KramersPrediction:
    """Capacity time scale, capacity asymptotic and mean transition time.

    ``reversible_reference`` is the classical prefactor formula evaluated with
    the reversible dynamics that shares the symmetric part S of M (for a
    symmetric M it coincides with ``mean_hit``).
    """
    if not saddles:
        raise EmptyGateList("need one saddle analysis per gate")
    if epsilon <= 0:
        raise PreconditionError("epsilon must be positive")
    if log_Z is None:
        if Z is None:
            log_Z = log_laplace_z(landscape, epsilon)
            Z_method = "laplace"
        else:
            log_Z = math.log(Z)
    d = landscape.potential.dimension
    H, h1 = landscape.H, landscape.h1
    log_T = -log_Z - H / epsilon + 0.5 * d * math.log(2 * math.pi * epsilon) - math.log(2 * math.pi)
    omega_sum = float(sum(s.omega for s in saddles))
    det_m1 = float(np.linalg.det(np.asarray(well_hessian, dtype=float)))
    if det_m1 <= 0:
        raise PreconditionError("Hessian at m1 must be positive definite")
    log_mean = math.log(2 * math.pi) + (H - h1) / epsilon - 0.5 * math.log(det_m1) - math.log(omega_sum)
    rev_sum = float(sum(s.mu_reversible / math.sqrt(-s.det_L) for s in saddles))
    log_rev = math.log(2 * math.pi) + (H - h1) / epsilon - 0.5 * math.log(det_m1) - math.log(rev_sum)
    return KramersPrediction(
        epsilon=epsilon,
        Z=math.exp(log_Z),
        Z_method=Z_method,
        T_eps=math.exp(log_T),
        omega_sum=omega_sum,
        cap_asym=math.exp(log_T) * omega_sum,
        mean_hit=math.exp(log_mean),
        reversible_reference=math.exp(log_rev),
        log_T_eps=log_T,
        log_mean_hit=log_mean,
    )
