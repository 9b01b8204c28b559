import threading

import numpy as np
import pytest

from energy_policy.energy import EnergyModel, IkEnergy
from energy_policy.kinematics import ChainSpec, forward_kinematics
from energy_policy.solver import (BudgetExhausted, GNCounter, SolverSingularError,
                                  cap_direction, damped_solve, line_search, solve,
                                  step_first_order, step_gauss_newton,
                                  step_gauss_newton_batch)

TWO = ChainSpec((0.15, 0.15))


class Quadratic(EnergyModel):
    """``1/2 (a - p)^T D (a - p)`` with a fixed diagonal ``D``."""

    input_dim = action_dim = 3

    def __init__(self, diag=(1.0, 4.0, 0.25)):
        self.D = np.diag(diag)

    def evaluate(self, a, p, a_prev=None):
        r = np.asarray(a) - np.asarray(p)
        return 0.5 * float(r @ self.D @ r), self.D @ r, self.D.copy()

    def target_position(self, P):
        return np.asarray(P)[..., :2]

    def end_effector(self, A):
        return np.asarray(A)[..., :2]

    def default_actions(self, P):
        return np.zeros_like(np.asarray(P, dtype=float))


def test_gn_step_is_exact_on_a_quadratic():
    e = Quadratic()
    target = np.array([0.3, -0.2, 0.1])
    a, alpha = step_gauss_newton(e, np.zeros(3), target)
    assert alpha == 1.0
    np.testing.assert_allclose(a, target, atol=1e-7)


def test_gn_step_at_minimum_stays():
    e = IkEnergy(TWO)
    a, _ = step_gauss_newton(e, np.zeros(2), np.array([0.3, 0.0]))
    np.testing.assert_array_equal(a, np.zeros(2))


def test_first_order_step_examples():
    e = IkEnergy(TWO)
    a0 = np.array([0.1, 0.1])
    p = np.array([0.15, 0.15])
    np.testing.assert_array_equal(step_first_order(e, a0, p, alpha=0.0), a0)
    np.testing.assert_array_equal(step_first_order(e, np.zeros(2), [0.3, 0.0]), np.zeros(2))
    g = e.gradient(a0, p)
    alpha = line_search(e, a0, -g, p, alpha_max=100.0)
    assert alpha > 0
    assert e.value(step_first_order(e, a0, p, alpha=alpha), p) < e.value(a0, p)
    with pytest.raises(ValueError):
        step_first_order(e, a0, p, alpha=-1.0)


def test_line_search_examples():
    e = Quadratic()
    p = np.ones(3)
    a = np.zeros(3)
    d = p - a
    assert line_search(e, a, d, p) == 1.0
    assert line_search(e, a, -d, p) == 0.0
    assert line_search(e, a, d, p, alpha_max=8.0) == 1.0


def test_line_search_on_ik_decreases(rng):
    e = IkEnergy(TWO)
    for _ in range(50):
        a = rng.uniform(-np.pi, np.pi, 2)
        p = rng.uniform(-0.2, 0.2, 2)
        v, g, H = e.evaluate(a, p)
        d = damped_solve(H, g)
        alpha = line_search(e, a, d, p)
        if np.max(np.abs(g)) > 1e-12:
            assert alpha > 0 and e.value(a + alpha * d, p) < v


def test_damped_direction_is_descent(rng):
    e = IkEnergy(ChainSpec.uniform(4), w_ref=0.0, w_temp=0.0)
    for _ in range(200):
        a = rng.uniform(-np.pi, np.pi, 4)
        p = rng.uniform(-0.25, 0.25, 2)
        _, g, H = e.evaluate(a, p)
        d = damped_solve(H, g)
        if np.any(g != 0):
            assert g @ d < 0


def test_damped_solve_raises_when_hopeless():
    with pytest.raises(SolverSingularError):
        damped_solve(-1e6 * np.eye(2), np.ones(2))


def test_cap_direction():
    d = np.array([3.0, -0.5])
    np.testing.assert_allclose(cap_direction(d, 1.0), d / 3.0)
    np.testing.assert_array_equal(cap_direction(d, 5.0), d)
    np.testing.assert_array_equal(cap_direction(d, None), d)


def _grid_solutions(chain, target, n=721, tol=2e-3):
    g = np.linspace(-np.pi, np.pi, n)
    Q = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    err = np.linalg.norm(forward_kinematics(chain, Q) - target, axis=1)
    return Q[err < tol]


def test_converges_to_a_grid_search_solution():
    e = IkEnergy(TWO)
    p = np.array([0.15, 0.15])
    a = np.array([0.1, 0.1])
    for it in range(50):
        a, _ = step_gauss_newton(e, a, p)
        if e.position_error(a, p) < 1e-6:
            break
    assert e.position_error(a, p) < 1e-6
    candidates = _grid_solutions(TWO, p)
    assert len(candidates)
    gap = np.min(np.linalg.norm(np.angle(np.exp(1j * (candidates - a))), axis=1))
    assert gap < 2 * (2 * np.pi / 720)


def test_solve_reports():
    e = IkEnergy(TWO)
    r = solve(e, np.zeros(2), np.array([0.3, 0.0]))
    assert r.iterations == 0 and r.converged and r.final_energy == 0.0
    r = solve(e, np.array([0.1, 0.1]), np.array([0.15, 0.15]))
    assert r.converged and r.position_error < 1e-6
    assert r.gn_calls >= r.iterations and r.final_energy <= r.initial_energy
    with pytest.raises(ValueError):
        solve(e, np.zeros(2), np.zeros(2), max_iters=0)


def test_solve_is_monotone(rng):
    e = IkEnergy(ChainSpec.uniform(3))
    p = np.array([0.05, -0.12])
    a = rng.uniform(-2, 2, 3)
    values = [e.value(a, p)]
    for _ in range(30):
        a, _ = step_gauss_newton(e, a, p)
        values.append(e.value(a, p))
    assert all(b <= a_ for a_, b in zip(values, values[1:]))


def test_solve_1000_random_targets_perturbed_init(rng):
    e = IkEnergy(TWO)
    r = 0.25 * np.sqrt(rng.uniform(size=1000))
    th = rng.uniform(0, 2 * np.pi, 1000)
    P = np.column_stack([r * np.cos(th), r * np.sin(th)])
    ok = 0
    for p in P:
        rep = solve(e, np.zeros(2) + 0.1, p)
        ok += rep.position_error < 1e-6
    assert ok >= 990


def test_batch_step_matches_single(rng):
    e = IkEnergy(ChainSpec.uniform(3), w_ref=1e-3)
    A = rng.uniform(-2, 2, (20, 3))
    P = rng.uniform(-0.2, 0.2, (20, 2))
    Ap = A + rng.normal(scale=0.1, size=A.shape)
    An, alphas = step_gauss_newton_batch(e, A, P, Ap)
    for m in range(20):
        a, alpha = step_gauss_newton(e, A[m], P[m], Ap[m])
        assert alpha == alphas[m]
        np.testing.assert_allclose(An[m], a, rtol=1e-10, atol=1e-12)


def test_counter_accounting():
    e = IkEnergy(TWO)
    c = GNCounter()
    r = solve(e, np.array([0.1, 0.1]), np.array([0.15, 0.15]), counter=c)
    assert c.count == r.gn_calls
    step_gauss_newton_batch(e, np.zeros((7, 2)), np.full((7, 2), 0.1), counter=c)
    assert c.count == r.gn_calls + 7
    capped = GNCounter(5)
    capped.consume(5)
    assert capped.remaining == 0
    with pytest.raises(BudgetExhausted):
        step_gauss_newton(e, np.zeros(2), np.zeros(2), counter=capped)
    assert capped.count == 5
    with pytest.raises(ValueError):
        GNCounter(0)


def test_counter_is_thread_safe():
    c = GNCounter()
    per_thread, n_threads = 20_000, 8

    def work():
        for _ in range(per_thread):
            c.consume(1)

    threads = [threading.Thread(target=work) for _ in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert c.count == per_thread * n_threads
