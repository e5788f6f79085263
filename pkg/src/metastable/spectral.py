"""Matrix analysis at saddle points: drift decomposition, the negative
eigenvalue of Hess U . M and the algebraic identities it satisfies."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositive, PreconditionError, SignNormalization, SpectrumShape

REAL_TOL = 1e-10
MU_MATCH_TOL = 1e-10
SIGN_TOL = 1e-12


@dataclass(frozen=True)
class DriftMatrix:
    M: np.ndarray
    M_t: np.ndarray
    S: np.ndarray
    K: np.ndarray
    positivity_margin: float

    @property
    def A(self) -> np.ndarray:
        """Antisymmetric part (M - M^T) / 2."""
        return 0.5 * (self.M - self.M_t)

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.M, self.M_t, rtol=0, atol=1e-14 * (1 + np.abs(self.M).max())))

    def transpose(self) -> "DriftMatrix":
        return DriftMatrix(self.M_t, self.M, self.S, self.K, self.positivity_margin)

    def scaled(self, c: float) -> "DriftMatrix":
        return decompose_drift(c * self.M)

    def to_dict(self) -> dict:
        return {
            "M": self.M.tolist(),
            "S": self.S.tolist(),
            "K": self.K.tolist(),
            "positivity_margin": self.positivity_margin,
        }


def decompose_drift(M) -> DriftMatrix:
    """Split M into S = (M + M^T)/2 and its SPD square root K."""
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise PreconditionError("drift matrix must be square")
    if not np.all(np.isfinite(M)):
        raise PreconditionError("drift matrix has non-finite entries")
    S = 0.5 * (M + M.T)
    w, Q = np.linalg.eigh(S)
    margin = float(w[0])
    if margin <= 0.0:
        raise NotPositive(f"v.Mv > 0 fails: smallest eigenvalue of S is {margin:.3g}")
    K = (Q * np.sqrt(w)) @ Q.T
    K = 0.5 * (K + K.T)
    M.setflags(write=False)
    return DriftMatrix(M, M.T.copy(), S, K, margin)


def _sign_normalize(v: np.ndarray, what: str, strict: bool) -> np.ndarray:
    v = v / np.linalg.norm(v)
    if abs(v[0]) <= SIGN_TOL:
        msg = f"first component of {what} vanishes; using first nonzero component for the sign"
        if strict:
            raise SignNormalization(msg)
        warnings.warn(msg, RuntimeWarning)
    for c in v:
        if abs(c) > SIGN_TOL:
            return v if c > 0 else -v
    return v


def _negative_eigenpair(P: np.ndarray) -> tuple[float, np.ndarray]:
    vals, vecs = np.linalg.eig(P)
    neg = [i for i, lam in enumerate(vals) if lam.real < 0]
    if len(neg) != 1:
        raise SpectrumShape(f"expected one eigenvalue with negative real part, got {len(neg)}: {vals}")
    i = neg[0]
    lam = vals[i]
    if abs(lam.imag) > REAL_TOL * (1 + abs(lam.real)):
        raise SpectrumShape(f"negative eigenvalue {lam} is not real")
    v = np.real(vecs[:, i])
    # one refinement step of inverse iteration cleans up the eigenvector
    try:
        v = np.linalg.solve(P - (lam.real + 1e-13 * (1 + abs(lam.real))) * np.eye(len(v)), v)
    except np.linalg.LinAlgError:
        pass
    return -float(lam.real), v / np.linalg.norm(v)


@dataclass(frozen=True)
class SaddleAnalysis:
    sigma: np.ndarray
    L: np.ndarray
    lam: np.ndarray  # eigenvalues of L, ascending (first one negative)
    mu: float
    v: np.ndarray
    v_star: np.ndarray
    alpha: float
    alpha_star: float
    omega: float
    M: np.ndarray
    mu_reversible: float  # negative eigenvalue (negated) of L . S
    notes: tuple[str, ...] = field(default=())

    @property
    def dimension(self) -> int:
        return self.L.shape[0]

    @property
    def det_L(self) -> float:
        return float(np.prod(self.lam))

    def to_dict(self, residuals: dict | None = None) -> dict:
        out = {
            "sigma": self.sigma.tolist(),
            "L": self.L.tolist(),
            "lambda": self.lam.tolist(),
            "mu": self.mu,
            "v": self.v.tolist(),
            "v_star": self.v_star.tolist(),
            "alpha": self.alpha,
            "alpha_star": self.alpha_star,
            "omega": self.omega,
            "M": self.M.tolist(),
            "mu_reversible": self.mu_reversible,
        }
        if residuals is not None:
            out["residuals"] = residuals
        return out


def analyze_saddle(L, drift: DriftMatrix, sigma=None, strict_sign: bool = False) -> SaddleAnalysis:
    """Negative eigenpairs of L M and L M^T and the derived constants."""
    L = np.array(L, dtype=float)
    d = L.shape[0]
    if L.shape != (d, d) or drift.M.shape != (d, d):
        raise PreconditionError("shape mismatch between Hessian and drift")
    if not np.allclose(L, L.T, rtol=1e-12, atol=1e-12 * (1 + np.abs(L).max())):
        raise PreconditionError("Hessian must be symmetric")
    L = 0.5 * (L + L.T)
    lam = np.linalg.eigvalsh(L)
    scale = np.abs(lam).max()
    if not (lam[0] < 0 and np.all(lam[1:] > 0)) or np.any(np.abs(lam) <= 1e-12 * scale):
        raise SpectrumShape(f"Hessian spectrum {lam} is not of saddle type")
    M = drift.M
    mu, v = _negative_eigenpair(L @ M)
    mu_s, v_star = _negative_eigenpair(L @ drift.M_t)
    if abs(mu - mu_s) > MU_MATCH_TOL * (1 + mu):
        raise SpectrumShape(f"negative eigenvalues of LM and LM^T differ: {mu} vs {mu_s}")
    v = _sign_normalize(v, "v", strict_sign)
    v_star = _sign_normalize(v_star, "v*", strict_sign)
    alpha = mu / float(v @ M @ v)
    alpha_star = mu / float(v_star @ M @ v_star)
    omega = mu / math.sqrt(-float(np.prod(lam)))
    mu_rev, _ = _negative_eigenpair(L @ drift.S)
    sigma = np.zeros(d) if sigma is None else np.asarray(sigma, dtype=float)
    return SaddleAnalysis(
        sigma=sigma,
        L=L,
        lam=lam,
        mu=mu,
        v=v,
        v_star=v_star,
        alpha=alpha,
        alpha_star=alpha_star,
        omega=omega,
        M=np.array(M),
        mu_reversible=mu_rev,
    )


def _identity_residuals(L, M, v, mu, alpha) -> dict:
    d = L.shape[0]
    Linv_v = np.linalg.solve(L, v)
    eig_res = float(np.linalg.norm(L @ M @ v + mu * v))
    bl1 = abs(float(v @ Linv_v) + 1.0 / alpha) * alpha
    P2 = L + 2 * alpha * np.outer(v, v)
    det_L = float(np.linalg.det(L))
    bl2_det = abs(float(np.linalg.det(P2)) + det_L) / abs(det_L)
    bl2_min = float(np.linalg.eigvalsh(0.5 * (P2 + P2.T))[0])
    P3 = L + alpha * np.outer(v, v)
    w, Q = np.linalg.eigh(0.5 * (P3 + P3.T))
    scale = float(np.abs(w).max())
    kernel = Q[:, 0]
    k = Linv_v / np.linalg.norm(Linv_v)
    bl3_min = abs(float(w[0])) / scale
    bl3_align = 1.0 - abs(float(kernel @ k))
    bl3_second = float(w[1]) / scale if d > 1 else 1.0
    return {
        "eigen": eig_res,
        "bl1": bl1,
        "bl2_det": bl2_det,
        "bl2_min_eig": bl2_min,
        "bl3_min_eig": bl3_min,
        "bl3_alignment": bl3_align,
        "bl3_second_eig": bl3_second,
    }


def verify_algebra(sa: SaddleAnalysis) -> dict:
    """Residuals of the eigen-equations and of the three algebraic identities.

    ``max_residual`` collects the quantities that vanish exactly in exact
    arithmetic; ``bl2_min_eig`` and ``bl3_second_eig`` must stay positive.
    """
    L, M = sa.L, sa.M
    fwd = _identity_residuals(L, M, sa.v, sa.mu, sa.alpha)
    adj = _identity_residuals(L, M.T, sa.v_star, sa.mu, sa.alpha_star)
    mu_fwd, _ = _negative_eigenpair(L @ M)
    mu_adj, _ = _negative_eigenpair(L @ M.T)
    out = {"forward": fwd, "adjoint": adj, "mu_match": abs(mu_fwd - mu_adj)}
    exact = [
        fwd["eigen"],
        fwd["bl1"],
        fwd["bl2_det"],
        fwd["bl3_min_eig"],
        fwd["bl3_alignment"],
        adj["eigen"],
        adj["bl1"],
        adj["bl2_det"],
        adj["bl3_min_eig"],
        adj["bl3_alignment"],
    ]
    out["max_residual"] = float(max(exact))
    out["positive_definite"] = bool(
        fwd["bl2_min_eig"] > 0
        and adj["bl2_min_eig"] > 0
        and fwd["bl3_second_eig"] > 0
        and adj["bl3_second_eig"] > 0
    )
    return out


def random_instance(rng: np.random.Generator, d: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Random (L, M): L symmetric with one negative eigenvalue, M = SPD + antisymmetric."""
    if d is None:
        d = int(rng.integers(2, 7))
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.concatenate([[-rng.uniform(0.2, 3.0)], rng.uniform(0.2, 3.0, d - 1)])
    L = (Q * lam) @ Q.T
    L = 0.5 * (L + L.T)
    B = rng.standard_normal((d, d))
    S = B @ B.T / d + rng.uniform(0.2, 1.0) * np.eye(d)
    C = rng.standard_normal((d, d))
    A = rng.uniform(0.0, 2.0) * (C - C.T) / 2
    return L, S + A
