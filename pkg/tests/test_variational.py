import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metastable import grid_pde as gp
from metastable import variational as vr
from metastable.errors import InfeasibleFlow, PreconditionError, ResolutionTooCoarse, ZeroEnergy
from metastable.kramers import predict

from conftest import NONREV, Solved, saddle_for


def zero_flow(ops, Z):
    return gp.GridFlow(ops.grid, np.zeros(ops.grid.n_edges), ops.flow_scale(Z))


# ------------------------------------------------------------ energies


def test_energy_cases(solved_small):
    s = solved_small["nonrev"]
    assert vr.energy_norm(zero_flow(s.ops, s.Z), s.ops) == 0.0
    psi = vr.make_phi(s.h, "Psi", s.ops, s.Z)
    assert vr.energy_norm(psi, s.ops) == pytest.approx(s.cap, rel=1e-10)
    phi = vr.make_phi(s.h_star, "Phi", s.ops, s.Z)
    assert vr.energy_norm(3 * phi, s.ops) == pytest.approx(9 * vr.energy_norm(phi, s.ops), rel=1e-13)


def test_make_phi_reversible_coincide(solved_small):
    s = solved_small["rev"]
    a, b, c = (vr.make_phi(s.h, k, s.ops, s.Z).values for k in ("Psi", "Phi", "PhiStar"))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(b, c)


def test_make_phi_constant_is_zero(solved_small):
    s = solved_small["nonrev"]
    f = s.h.with_values(np.full(s.grid.shape, 0.7))
    for k in ("Psi", "Phi", "PhiStar"):
        assert not np.any(vr.make_phi(f, k, s.ops, s.Z).values)
    with pytest.raises(ValueError):
        vr.make_phi(f, "Omega", s.ops, s.Z)


def test_prop1_flow_divergence_free(solved_small):
    s = solved_small["nonrev"]
    f, phi = vr.prop1_optimizer(s.h, s.h_star, s.ops, s.Z)
    feas = phi.feasibility(s.mask, 0.0)
    assert feas["rel_div"] < 1e-8 and feas["rel_flux"] < 1e-8


# ------------------------------------------------------------ bounds


def test_dirichlet_reversible_optimum(solved_small):
    s = solved_small["rev"]
    cert = vr.dirichlet_bound(s.h, zero_flow(s.ops, s.Z), s.ops, s.mask, s.Z)
    assert cert.kind == "upper" and cert.status == "feasible"
    assert cert.value == pytest.approx(s.cap, rel=1e-10)


def test_thomson_reversible_optimum(solved_small):
    s = solved_small["rev"]
    f = s.h.with_values(np.zeros(s.grid.shape))
    # Psi_h points into A, so the unit-outflow flow is -Psi_h / cap
    phi = vr.make_phi(s.h, "Psi", s.ops, s.Z) * (-1.0 / s.cap)
    cert = vr.thomson_bound(f, phi, s.ops, s.mask, s.Z)
    assert cert.kind == "lower" and cert.value == pytest.approx(s.cap, rel=1e-10)
    assert cert.feasibility["flux"] == pytest.approx(1.0, abs=1e-8)


def test_ramp_upper_bound(solved_small):
    s = solved_small["rev"]
    x = s.grid.nodes[..., 0]
    f = s.h.with_values(np.clip((0.7 - x) / 1.4, 0, 1))
    cert = vr.dirichlet_bound(f, zero_flow(s.ops, s.Z), s.ops, s.mask, s.Z)
    assert cert.value >= s.cap


@pytest.mark.parametrize("kind", ["rev", "nonrev"])
def test_optimizers_reproduce_capacity(solved_small, kind):
    s = solved_small[kind]
    f, phi = vr.prop1_optimizer(s.h, s.h_star, s.ops, s.Z)
    up = vr.dirichlet_bound(f, phi, s.ops, s.mask, s.Z)
    f2, phi2 = vr.prop2_optimizer(s.h, s.h_star, s.cap, s.ops, s.Z)
    lo = vr.thomson_bound(f2, phi2, s.ops, s.mask, s.Z)
    assert abs(up.value / s.cap - 1) < 1e-8
    assert abs(lo.value / s.cap - 1) < 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(0.5, 3.0), st.floats(-1.0, 1.0))
def test_duality_sandwich(solved_small, amp, k, shift):
    """Perturb f in its class while keeping the optimal (feasible) flow."""
    s = solved_small["nonrev"]
    X = s.grid.nodes
    bump = amp * np.sin(k * X[..., 0] + shift) * np.cos(k * X[..., 1]) * s.mask.omega
    f1, phi1 = vr.prop1_optimizer(s.h, s.h_star, s.ops, s.Z)
    up = vr.dirichlet_bound(f1.with_values(f1.values + bump), phi1, s.ops, s.mask, s.Z)
    f2, phi2 = vr.prop2_optimizer(s.h, s.h_star, s.cap, s.ops, s.Z)
    lo = vr.thomson_bound(f2.with_values(f2.values + bump / s.cap), phi2, s.ops, s.mask, s.Z)
    assert lo.value <= s.cap * (1 + 1e-10)
    assert up.value >= s.cap * (1 - 1e-10)


def test_bound_errors(solved_small):
    s = solved_small["nonrev"]
    f, phi = vr.prop1_optimizer(s.h, s.h_star, s.ops, s.Z)
    with pytest.raises(InfeasibleFlow):
        vr.dirichlet_bound(f, vr.make_phi(s.h, "Psi", s.ops, s.Z), s.ops, s.mask, s.Z)
    loose = vr.dirichlet_bound(f, vr.make_phi(s.h, "Psi", s.ops, s.Z), s.ops, s.mask, s.Z, strict=False)
    assert loose.status == "infeasible" and loose.feasibility["rel_div"] > 1e-6
    with pytest.raises(PreconditionError):
        vr.dirichlet_bound(s.h_star.with_values(np.zeros(s.grid.shape)), phi, s.ops, s.mask, s.Z)
    zero = s.h.with_values(np.zeros(s.grid.shape))
    with pytest.raises(ZeroEnergy):
        vr.thomson_bound(zero, zero_flow(s.ops, s.Z), s.ops, s.mask, s.Z, strict=False)


def test_certificate_json(solved_small):
    s = solved_small["rev"]
    cert = vr.dirichlet_bound(s.h, zero_flow(s.ops, s.Z), s.ops, s.mask, s.Z)
    d = json.loads(cert.to_json())
    assert d["kind"] == "upper" and len(d["inputs_digest"]) == 64
    again = vr.dirichlet_bound(s.h, zero_flow(s.ops, s.Z), s.ops, s.mask, s.Z)
    assert again.inputs_digest == cert.inputs_digest


# ------------------------------------------------------------ saddle pack

PACK_EPS = 0.05


@pytest.fixture(scope="module")
def pack_rev(landscape):
    grid = gp.Grid2D.from_spacing((0, 0), (1.8, 1.3), math.sqrt(PACK_EPS) / 8)
    s = Solved(landscape, np.eye(2), PACK_EPS, grid, radius=0.2, swap=False)
    sa = saddle_for(landscape, np.eye(2))
    pack = vr.build_saddle_pack(sa, grid, landscape, PACK_EPS, mask=s.mask)
    return s, sa, pack


def test_pack_values(pack_rev, landscape):
    s, sa, pack = pack_rev
    i, j = s.grid.node_index((0.0, 0.0))
    assert pack.p_raw.values[i, j] == pytest.approx(0.5, abs=1e-15)
    assert pack.p_eps.at(landscape.m1.location) == 1.0
    assert pack.p_eps.at(landscape.m2.location) == 0.0
    assert np.all(pack.p_raw.values[pack.W1_eps] == 1) and np.all(pack.p_raw.values[pack.W2_eps | pack.X_eps] == 0)
    assert pack.K >= vr.MIN_K and pack.delta == pytest.approx(vr.saddle_delta(PACK_EPS, pack.K))


def test_pack_monotone_along_v(pack_rev):
    s, sa, pack = pack_rev
    X = s.grid.nodes
    # p_raw inside B_eps is a function of z.v and increases towards m1
    t = X[pack.B_eps] @ pack.v
    vals = pack.p_raw.values[pack.B_eps]
    order = np.argsort(t)
    assert np.all(np.diff(vals[order]) >= -1e-15)


def test_pack_gradient(pack_rev):
    s, sa, pack = pack_rev
    g = s.grid
    eps, a = PACK_EPS, pack.alpha
    C = math.sqrt(2 * math.pi * eps / a)
    mids = np.concatenate([g.xedge_mid.reshape(-1, 2), g.yedge_mid.reshape(-1, 2)])
    comp = np.concatenate([np.zeros(g.n_xedges, int), np.ones(g.n_yedges, int)])
    t = mids @ pack.v
    exact = np.exp(-a * t**2 / (2 * eps)) / C * pack.v[comp]
    sel = (pack.q != 0) & (np.abs(t) < math.sqrt(eps / a)) & (np.abs(exact) > 1e-3)
    rel = np.abs(pack.q[sel] - exact[sel]) / np.abs(exact[sel])
    assert sel.sum() > 100
    assert rel.max() < g.h**2 * a / eps * 10


def test_pack_upper_bound_reversible(pack_rev, landscape):
    s, sa, pack = pack_rev
    f, phi = pack.upper_pair(s.ops, s.Z)
    cert = vr.dirichlet_bound(f, phi, s.ops, s.mask, s.Z, strict=False)
    k = predict(landscape, [sa], landscape.potential.hess(landscape.m1.location), PACK_EPS, Z=s.Z)
    ratio = cert.value / (k.T_eps * k.omega_sum)
    assert 1.0 <= ratio <= 1.5, ratio
    assert cert.value >= s.cap


def test_pack_region_codes(pack_rev):
    _, _, pack = pack_rev
    codes = pack.region_codes().values
    assert set(np.unique(codes)) <= {0, 1, 2, 3}
    assert (codes == 3).sum() == pack.B_eps.sum()


def test_pack_errors(landscape):
    sa = saddle_for(landscape, np.eye(2))
    coarse = gp.Grid2D.from_spacing((0, 0), (1.8, 1.8), 0.2)
    with pytest.raises(ResolutionTooCoarse):
        vr.build_saddle_pack(sa, coarse, landscape, PACK_EPS)
    with pytest.raises(PreconditionError):
        vr.build_saddle_pack(sa, coarse, landscape, PACK_EPS, K=0.5)


def test_max_pack_K_keeps_wells_outside(landscape):
    sa = saddle_for(landscape, np.eye(2))
    for eps in (0.2, 0.1, 0.05, 0.02, 0.005):
        K = vr.max_pack_K(sa, landscape, eps)
        assert K <= 4.0
        assert vr.saddle_delta(eps, K) < 1.0  # the wells sit at distance 1 along e1


# ------------------------------------------------------------ bl6 quadrature


@pytest.mark.parametrize("M", [np.eye(2), NONREV])
def test_bl6_quadrature(landscape, M):
    sa = saddle_for(landscape, M)
    p = landscape.potential
    ratios = [vr.saddle_box_quadrature(sa, p, e) / vr.bl6_target(sa, e) for e in (0.2, 0.1, 0.05, 0.02)]
    assert 0.9 <= ratios[2] <= 1.1
    dist = [abs(r - 1) for r in ratios]
    assert all(a > b for a, b in zip(dist, dist[1:])), ratios


def test_bl6_quadrature_converged(landscape):
    sa = saddle_for(landscape, NONREV)
    p = landscape.potential
    a = vr.saddle_box_quadrature(sa, p, 0.05, order=24)
    b = vr.saddle_box_quadrature(sa, p, 0.05, order=48)
    assert abs(a / b - 1) < 1e-6


def test_bl6_quadrature_precondition(landscape):
    with pytest.raises(PreconditionError):
        vr.saddle_box_quadrature(saddle_for(landscape, np.eye(2)), landscape.potential, 0.3)
