import csv
import math

import numpy as np
import pytest

from metastable import grid_pde as gp
from metastable.errors import AllCensored, BlowUp, InsufficientData, PreconditionError
from metastable.potential import PotentialSpec
from metastable.sde import SdeConfig, TransitionStats, arrhenius_fit, estimate_committor, path_rng, simulate_hitting
from metastable.spectral import decompose_drift

from conftest import NONREV

EYE = decompose_drift(np.eye(2))
A = ((-1.0, 0.0), 0.3)
B = ((1.0, 0.0), 0.3)


def test_config_validation():
    with pytest.raises(PreconditionError):
        SdeConfig(0.15, dt=0.02)  # dt > eps/10
    with pytest.raises(PreconditionError):
        SdeConfig(0.5, dt=0.02)  # dt > 0.01
    with pytest.raises(PreconditionError):
        SdeConfig(-0.1)
    with pytest.raises(PreconditionError):
        SdeConfig(0.1, n_paths=0)
    with pytest.raises(PreconditionError):
        SdeConfig(0.1, brownian_substeps=0)
    assert SdeConfig(0.1, dt=0.01).dt == 0.01


def test_path_streams_are_keyed():
    a = path_rng(7, 3).standard_normal(4)
    b = path_rng(7, 3).standard_normal(4)
    c = path_rng(7, 4).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_bitwise_reproducible(quartic, landscape, tmp_path):
    cfg = SdeConfig(0.25, dt=2e-3, seed=99, n_paths=200)
    a = simulate_hitting(quartic, landscape, decompose_drift(NONREV), cfg, csv_path=tmp_path / "a.csv")
    b = simulate_hitting(quartic, landscape, decompose_drift(NONREV), cfg, csv_path=tmp_path / "b.csv")
    assert a == b
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert len(rows) == 200 and float(rows[5]["hit_time"]) == a.times[5]
    c = simulate_hitting(quartic, landscape, decompose_drift(NONREV), SdeConfig(0.25, dt=2e-3, seed=100, n_paths=200))
    assert c != a


def test_prefix_independent_of_n_paths(quartic, landscape):
    small = simulate_hitting(quartic, landscape, EYE, SdeConfig(0.25, dt=2e-3, seed=4, n_paths=50))
    large = simulate_hitting(quartic, landscape, EYE, SdeConfig(0.25, dt=2e-3, seed=4, n_paths=120))
    np.testing.assert_array_equal(small.times, large.times[:50])


def test_stats_fields(quartic, landscape):
    st = simulate_hitting(quartic, landscape, EYE, SdeConfig(0.25, dt=2e-3, seed=1, n_paths=300))
    assert st.stderr == pytest.approx(np.std(st.times, ddof=1) / math.sqrt(300), rel=1e-12)
    assert st.censored == 0 and not st.mean_is_lower_bound
    assert st.median == pytest.approx(np.median(st.times))
    assert set(st.to_dict()) == {"n", "mean", "stderr", "median", "log_mean", "censored", "mean_is_lower_bound"}


def test_censoring_monotone(quartic, landscape):
    done = []
    for T in (1.0, 3.0, 10.0):
        st = simulate_hitting(quartic, landscape, EYE, SdeConfig(0.25, dt=2e-3, seed=2, n_paths=200, max_time=T))
        done.append(st.n - st.censored)
        if st.censored:
            assert st.mean_is_lower_bound
    assert done[0] <= done[1] <= done[2]


def test_all_censored(quartic, landscape):
    with pytest.raises(AllCensored):
        simulate_hitting(quartic, landscape, EYE, SdeConfig(0.1, dt=1e-2, seed=0, n_paths=5, max_time=0.05))


def test_blow_up(landscape):
    # U = x^4 + y^4 with a huge step is explosively unstable
    p = PotentialSpec(
        "steep",
        2,
        value_fn=lambda x: x[..., 0] ** 4 + x[..., 1] ** 4,
        grad_fn=lambda x: 4 * np.asarray(x) ** 3,
        box=((-3, 3), (-3, 3)),
    )
    with pytest.raises(BlowUp):
        estimate_committor((8.0, 8.0), A, B, p, EYE, SdeConfig(0.1, dt=1e-2, n_paths=3))


def test_python_fallback_matches_statistics(quartic, landscape):
    """Non-polynomial potentials use the Python stepper; same law, different draws."""
    p = PotentialSpec("quartic_fn", 2, value_fn=quartic.value_fn or quartic.U, grad_fn=quartic.grad, hess_fn=quartic.hess, box=quartic.box)
    assert p.poly is None
    q, se = estimate_committor((0.0, 0.0), A, B, p, EYE, SdeConfig(0.1, dt=2e-3, seed=3, n_paths=150))
    assert abs(q - 0.5) < 3 * math.sqrt(0.25 / 150)


def test_committor_symmetry_line(quartic):
    cfg = SdeConfig(0.1, dt=1e-3, seed=11, n_paths=800)
    q, se = estimate_committor((0.0, 0.3), A, B, quartic, EYE, cfg)
    assert abs(q - 0.5) < 3 * max(se, 1e-12)


def test_committor_mirrored_points(quartic):
    cfg = SdeConfig(0.1, dt=1e-3, seed=12, n_paths=800)
    q1, s1 = estimate_committor((0.3, 0.2), A, B, quartic, EYE, cfg)
    q2, s2 = estimate_committor((-0.3, -0.2), A, B, quartic, EYE, cfg, seed_offset=10_000)
    assert abs(q1 + q2 - 1) < 3 * math.hypot(s1, s2)


def test_committor_near_A(quartic):
    q, _ = estimate_committor((-1.32, 0.0), A, B, quartic, EYE, SdeConfig(0.05, dt=1e-3, seed=13, n_paths=400))
    assert q > 0.95


def test_committor_start_in_target(quartic):
    with pytest.raises(PreconditionError):
        estimate_committor((-1.0, 0.1), A, B, quartic, EYE, SdeConfig(0.1))


def test_committor_matches_pde(quartic, solved_rev):
    s = solved_rev
    x = (0.5, 0.0)
    q, se = estimate_committor(x, A, B, quartic, EYE, SdeConfig(0.1, dt=1e-3, seed=21, n_paths=2000))
    assert abs(q - s.h.interp(x)) < 3 * se


def test_nonreversible_committor_is_adjoint_potential(quartic, solved_nonrev):
    """The SDE's generator is built from M^T, so its committor is h* of the grid solver."""
    s = solved_nonrev
    x = (0.2, 0.4)
    q, se = estimate_committor(x, A, B, quartic, decompose_drift(NONREV), SdeConfig(0.1, dt=1e-3, seed=22, n_paths=2000))
    assert abs(q - s.h_star.interp(x)) < 3 * se
    assert abs(s.h_star.interp(x) - s.h.interp(x)) > 3 * se


def test_arrhenius_synthetic():
    data = [(e, math.exp(0.25 / e)) for e in (0.3, 0.2, 0.1, 0.05)]
    slope, intercept, r2 = arrhenius_fit(data)
    assert slope == pytest.approx(0.25, abs=1e-12)
    assert abs(intercept) < 1e-10 and r2 == pytest.approx(1.0, abs=1e-12)


def test_arrhenius_needs_three():
    with pytest.raises(InsufficientData):
        arrhenius_fit([(0.2, 3.0), (0.1, 9.0), (0.1, 9.5)])


def test_arrhenius_monte_carlo(quartic, landscape):
    results = []
    for eps in (0.25, 0.18, 0.15):
        st = simulate_hitting(quartic, landscape, EYE, SdeConfig(eps, dt=1e-3, seed=31, n_paths=1000))
        results.append((eps, st))
    slope, _, _ = arrhenius_fit(results)
    assert 0.2 <= slope <= 0.3


@pytest.mark.slow
def test_time_step_refinement(quartic, landscape):
    """Coupled Brownian paths: (dt, two substeps) against (dt/2, one substep)."""
    coarse = simulate_hitting(quartic, landscape, EYE, SdeConfig(0.15, dt=1e-3, seed=5, n_paths=4000, brownian_substeps=2))
    fine = simulate_hitting(quartic, landscape, EYE, SdeConfig(0.15, dt=5e-4, seed=5, n_paths=4000))
    assert abs(coarse.mean - fine.mean) < coarse.stderr


def test_mean_hitting_time_matches_pde(quartic, landscape):
    """MC mean against the grid solve of the SDE's own generator (built from M^T)."""
    eps = 0.25
    st = simulate_hitting(quartic, landscape, decompose_drift(NONREV), SdeConfig(eps, dt=1e-3, seed=41, n_paths=2000))
    grid = gp.Grid2D(((-2, 2), (-1.5, 1.5)), 201, 151)
    ops = gp.discretize_generator(grid, quartic, decompose_drift(NONREV).transpose(), eps)
    target = np.linalg.norm(grid.nodes - landscape.m2.location, axis=-1) <= 0.3
    u = gp.mean_hitting_time(ops, target)
    assert abs(st.mean - u.at(landscape.m1.location)) < 4 * st.stderr + 0.03 * st.mean
