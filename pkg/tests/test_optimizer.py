import numpy as np
import pytest

from _instances import bounded_instance, proportional_instance, random_feasible_points
from thinlattice.optimizer import (InfeasibleProblem, SolverError, SolverSettings,
                                   brute_force_oracle, project_box_hyperplane, solve_update)
from thinlattice.schemes import UpdateProblem, volume_residual


def test_projection_of_feasible_point_is_identity():
    y = np.array([1.0, 3.0])
    np.testing.assert_array_equal(project_box_hyperplane(y, [0, 0], [10, 10], [1, 1], 4.0), y)


def test_projection_symmetric():
    np.testing.assert_allclose(project_box_hyperplane([0, 0], [0, 0], [10, 10], [1, 1], 4.0), [2, 2])


def test_projection_with_active_upper_bound():
    # clip(y + lam w) sums to 4 at lam = 1
    np.testing.assert_allclose(project_box_hyperplane([5, 0], [0, 0], [3, 3], [1, 1], 4.0), [3, 1])


def test_projection_infeasible():
    with pytest.raises(InfeasibleProblem, match="upper"):
        project_box_hyperplane([0, 0], [0, 0], [1, 1], [1, 1], 5.0)
    with pytest.raises(InfeasibleProblem, match="lower"):
        project_box_hyperplane([0, 0], [2, 2], [3, 3], [1, 1], 1.0)


def test_projection_properties_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = rng.integers(2, 6)
        l = rng.uniform(0, 1, n)
        u = l + rng.uniform(0.1, 2, n)
        w = rng.uniform(0.5, 3, n)
        c = rng.uniform(w @ l, w @ u)
        y = rng.normal(1, 2, n)
        x = project_box_hyperplane(y, l, u, w, c)
        assert np.all(x >= l) and np.all(x <= u)
        assert abs(w @ x - c) <= 1e-10
        np.testing.assert_allclose(project_box_hyperplane(x, l, u, w, c), x, atol=1e-12, rtol=0)
        z = random_feasible_points(rng, l, u, w, c, 200)
        assert np.all(np.linalg.norm(z - y, axis=1) >= np.linalg.norm(x - y) - 1e-12)


@pytest.mark.parametrize("scheme", [1, 2])
def test_solve_proportional_two_walls(scheme):
    p = UpdateProblem(scheme, [2, 1], [1, 1], 1.0, 3.0, [0, 0], [10, 10], [1.5, 1.5])
    r = solve_update(p)
    np.testing.assert_allclose(r.t_next, [2, 1], rtol=1e-9)
    assert r.objective_final <= 1e-10
    assert r.converged


@pytest.mark.parametrize("scheme", [1, 2])
def test_solve_bounded_two_walls_matches_oracle(scheme):
    p = UpdateProblem(scheme, [2, 1], [1, 1], 1.0, 3.0, [0, 0], [1.2, 10], [1.0, 2.0])
    r = solve_update(p)
    oracle = brute_force_oracle(p, 1e-3)
    np.testing.assert_allclose(r.t_next, [1.2, 1.8], atol=1e-9)
    assert abs(r.objective_final - p.objective(oracle)) <= 1e-3


@pytest.mark.parametrize("scheme", [1, 2])
def test_solver_random_proportional(scheme):
    rng = np.random.default_rng(42 + scheme)
    for _ in range(20):
        p, t_star = proportional_instance(rng, scheme, int(rng.integers(2, 21)))
        r = solve_update(p)
        assert np.max(np.abs(r.t_next - t_star) / t_star) <= 1e-6
        assert r.objective_final <= 1e-10


@pytest.mark.parametrize("scheme", [1, 2])
def test_solver_invariants_and_oracle(scheme):
    rng = np.random.default_rng(7 + scheme)
    for _ in range(10):
        p = bounded_instance(rng, scheme)
        r = solve_update(p)
        assert np.all(r.t_next >= p.lower_bounds) and np.all(r.t_next <= p.upper_bounds)
        assert abs(volume_residual(r.t_next, p.lengths, p.height_H, p.target_volume)) <= 1e-10
        assert r.objective_final <= p.objective(p.t_start) + 1e-12
        assert all(b <= a for a, b in zip(r.objective_history, r.objective_history[1:]))
        oracle_obj = p.objective(brute_force_oracle(p, 1e-3))
        assert r.objective_final <= oracle_obj + 1e-9


def test_solver_is_deterministic():
    rng = np.random.default_rng(1)
    p = bounded_instance(rng, 1, n=6)
    a, b = solve_update(p), solve_update(p)
    assert a.t_next.tobytes() == b.t_next.tobytes()
    assert a.objective_history == b.objective_history
    assert a.inner_iterations == b.inner_iterations


def test_solver_respects_iteration_cap():
    rng = np.random.default_rng(2)
    p, _ = proportional_instance(rng, 1, 15)
    r = solve_update(p, SolverSettings(max_inner_iters=3))
    assert r.inner_iterations == 3 and not r.converged


def test_solver_infeasible_problem():
    p = UpdateProblem(1, [1, 1], [1, 1], 1.0, 10.0, [0, 0], [1, 1], [1, 1])
    with pytest.raises(InfeasibleProblem):
        solve_update(p)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_solver_non_finite_gradient():
    p = UpdateProblem(1, [np.inf, 1], [1, 1], 1.0, 2.0, [0.5, 0.5], [1.5, 1.5], [1, 1])
    with pytest.raises(SolverError, match="iteration 0"):
        solve_update(p)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(backtrack_factor=1.0)
    with pytest.raises(ValueError):
        SolverSettings(step_init=0)


def test_oracle_single_wall_pinned():
    for scheme in (1, 2):
        p = UpdateProblem(scheme, [3.0], [4.0], 2.0, 10.0, [0], [5], [1.0])
        assert brute_force_oracle(p).tolist() == [10.0 / (2.0 * 4.0)]


def test_oracle_interior_two_walls():
    p = UpdateProblem(1, [2, 1], [1, 1], 1.0, 3.0, [0.5, 0.5], [2.5, 2.5], [1.5, 1.5])
    np.testing.assert_allclose(brute_force_oracle(p, 1e-3), [2, 1], atol=1e-3)


def test_oracle_degenerate_energy():
    p = UpdateProblem(1, [0, 0], [1, 1], 1.0, 2.0, [0.5, 0.5], [1.5, 1.5], [1, 1])
    t = brute_force_oracle(p, 1e-2)
    assert p.objective(t) == 0.0
    assert abs(t.sum() - 2.0) <= 1e-12


def test_oracle_rejects_large_problems():
    p = UpdateProblem(1, [1] * 5, [1] * 5, 1.0, 5.0, [0] * 5, [2] * 5, [1] * 5)
    with pytest.raises(ValueError):
        brute_force_oracle(p)
