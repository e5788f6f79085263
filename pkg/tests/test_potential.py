import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metastable.errors import DegenerateHessian, DimensionUnsupported, NotDoubleWell, PreconditionError
from metastable.potential import (
    CriticalPoint,
    PotentialSpec,
    build_landscape,
    check_assumptions,
    classify,
    find_critical_points,
    make_potential,
)


def test_quartic_critical_points(quartic):
    crits = find_critical_points(quartic, [(-0.9, 0.1), (1.1, -0.1), (0.05, 0.02)])
    by_kind = {}
    for c in crits:
        by_kind.setdefault(c.kind, []).append(c)
    assert len(by_kind["minimum"]) == 2 and len(by_kind["saddle"]) == 1
    for m in by_kind["minimum"]:
        assert abs(abs(m.location[0]) - 1) < 1e-10 and abs(m.location[1]) < 1e-10
        np.testing.assert_allclose(m.hessian_eigenvalues, [1.0, 2.0], atol=1e-10)
    s = by_kind["saddle"][0]
    np.testing.assert_allclose(s.location, [0, 0], atol=1e-10)
    np.testing.assert_allclose(s.hessian_eigenvalues, [-1.0, 1.0], atol=1e-10)


def test_newton_fixed_point_and_empty_seeds(quartic):
    for c in find_critical_points(quartic, quartic.seeds):
        assert np.linalg.norm(quartic.grad(c.location)) <= 1e-10
    assert find_critical_points(quartic, []) == []


def test_nonconverging_seed_dropped_with_warning():
    # U = x^4/4 + y^2/2 - x has one critical point; Newton from x=0 hits a singular Hessian
    p = make_potential("polynomial", {"terms": [[0.25, [4, 0]], [0.5, [0, 2]], [-1.0, [1, 0]]]})
    with pytest.warns(RuntimeWarning):
        crits = find_critical_points(p, [(0.0, 0.0), (2.0, 1.0)])
    assert len(crits) == 1 and crits[0].kind == "minimum"


def test_degenerate_hessian_raises():
    with pytest.raises(DegenerateHessian):
        classify(np.array([0.0, 1.0]))
    p = make_potential("polynomial", {"terms": [[1.0, [0, 0]]], "dimension": 2})
    with pytest.raises(DegenerateHessian):
        find_critical_points(p, [(0.3, 0.1)])


def test_landscape_quartic(landscape):
    assert [g.location.tolist() for g in landscape.gates] == [[0.0, 0.0]] or np.allclose(landscape.gates[0].location, 0)
    assert len(landscape.gates) == 1
    assert landscape.H == pytest.approx(0.25, abs=1e-12)
    assert landscape.h1 == pytest.approx(0.0, abs=1e-12) and landscape.h2 == pytest.approx(0.0, abs=1e-12)
    assert landscape.H > landscape.h1 >= landscape.h2


def test_tilted_orders_wells():
    p = make_potential("tilted")
    land = build_landscape(p, find_critical_points(p, p.seeds))
    assert land.h1 > land.h2
    assert land.m2.location[0] < 0  # the tilt +0.1 x deepens the left well
    assert land.H > land.h1


def test_three_minima_is_not_double_well(landscape):
    extra = CriticalPoint(np.array([5.0, 5.0]), "minimum", np.array([1.0, 1.0]), 3.0)
    crits = [landscape.m1, landscape.m2, landscape.gates[0], extra]
    with pytest.raises(NotDoubleWell):
        build_landscape(landscape.potential, crits)


def test_gate_search_needs_2d():
    p = make_potential("polynomial", {"terms": [[0.25, [4, 0, 0]], [-0.5, [2, 0, 0]], [0.5, [0, 2, 0]], [0.5, [0, 0, 2]]]})
    crits = find_critical_points(p, [(-1, 0, 0), (1, 0, 0), (0, 0, 0)])
    with pytest.raises(DimensionUnsupported):
        build_landscape(p, crits)
    land = build_landscape(p, crits, declared_gates=[c for c in crits if c.kind == "saddle"])
    assert land.H - land.h1 == pytest.approx(0.25)


def test_landscape_permutation_invariant(quartic, landscape):
    crits = find_critical_points(quartic, quartic.seeds)
    for perm in itertools.permutations(crits):
        land = build_landscape(quartic, list(perm))
        np.testing.assert_array_equal(land.m1.location, landscape.m1.location)
        np.testing.assert_array_equal(land.gates[0].location, landscape.gates[0].location)


@pytest.mark.parametrize("tau", [1e-4, 1e-3, 1e-2])
def test_single_gate_for_tau_range(quartic, tau):
    land = build_landscape(quartic, find_critical_points(quartic, quartic.seeds), tau_gate=tau)
    assert len(land.gates) == 1


@pytest.mark.parametrize("name", ["quartic2d", "tilted"])
def test_fd_gradient_agrees(name):
    p = make_potential(name)
    rng = np.random.default_rng(3)
    x = rng.uniform(-3, 3, size=(100, 2))
    assert np.max(np.abs(p.fd_grad(x) - p.grad(x))) < 1e-6


def test_fd_fallback_without_analytic_derivatives():
    p = PotentialSpec("numeric", 2, value_fn=lambda x: 0.25 * (x[..., 0] ** 2 - 1) ** 2 + 0.5 * x[..., 1] ** 2)
    q = make_potential("quartic2d")
    x = np.array([[0.3, -0.7], [1.2, 0.4]])
    np.testing.assert_allclose(p.grad(x), q.grad(x), atol=1e-8)
    np.testing.assert_allclose(p.hess(x), q.hess(x), atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_hessian_symmetric(x, y):
    p = make_potential("tilted")
    H = p.hess(np.array([x, y]))
    assert np.max(np.abs(H - H.T)) <= 1e-12 * max(1.0, np.max(np.abs(H)))


def test_check_assumptions_quartic(quartic):
    rep = check_assumptions(quartic, ((-3, 3), (-3, 3)))
    assert all(rep.flags.values()), rep.flags


def test_check_assumptions_constant_fails_p2():
    p = make_potential("polynomial", {"terms": [[1.0, [0, 0]]]})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = check_assumptions(p, ((-1, 1), (-1, 1)))
    assert rep.flags["P2"] is False


def test_check_assumptions_box_excluding_minimum(quartic):
    with pytest.raises(PreconditionError):
        check_assumptions(quartic, ((-3, 0.5), (-3, 3)))


def test_landscape_json_roundtrip(landscape):
    import json

    d = json.loads(json.dumps(landscape.to_dict()))
    assert d["H"] == pytest.approx(0.25)
