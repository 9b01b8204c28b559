"""Per-instance energy minimisation: gradient and damped Gauss-Newton steps."""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from .energy import EnergyModel

MAX_HALVINGS = 24
# infinity-norm cap (radians) on a GN direction before the line search
MAX_STEP = 1.0


class SolverSingularError(RuntimeError):
    """Damped Gauss-Newton system could not be factorised."""


class BudgetExhausted(RuntimeError):
    pass


class GNCounter:
    """Audited count of Gauss-Newton step evaluations, with an optional cap.

    Increments are guarded by a lock so workers may share one counter.
    """

    def __init__(self, cap: int | None = None):
        if cap is not None and cap <= 0:
            raise ValueError("budget cap must be positive")
        self.cap = cap
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    @property
    def remaining(self) -> int | float:
        if self.cap is None:
            return float("inf")
        return self.cap - self._count

    def consume(self, n: int = 1) -> None:
        with self._lock:
            if self.cap is not None and self._count + n > self.cap:
                raise BudgetExhausted(
                    f"GN budget of {self.cap} exceeded ({self._count} + {n})")
            self._count += n


@dataclass
class SolveReport:
    final_actions: np.ndarray
    final_energy: float
    initial_energy: float
    iterations: int
    gn_calls: int
    converged: bool
    position_error: float
    wall_time: float = 0.0


def step_first_order(energy: EnergyModel, a, p, a_prev=None, alpha=1e-2):
    """Plain gradient step ``a - alpha * grad E``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    a = np.asarray(a, dtype=float)
    g = energy.gradient(a, p, a_prev)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite energy gradient")
    return a - alpha * g


def line_search(energy: EnergyModel, a, direction, p=None, a_prev=None,
                alpha_max=1.0, e0=None) -> float:
    """Largest ``alpha_max / 2**k`` (k <= 24) giving a strict energy decrease.

    Returns 0.0 when no trial step decreases the energy.
    """
    a = np.asarray(a, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if e0 is None:
        e0 = energy.value(a, p, a_prev)
    alpha = float(alpha_max)
    for _ in range(MAX_HALVINGS + 1):
        if energy.value(a + alpha * direction, p, a_prev) < e0:
            return alpha
        alpha *= 0.5
    return 0.0


def damped_solve(H, g):
    """Solve ``(H + lam I) d = -g`` with a scale-aware, escalating damping."""
    dim = len(g)
    # |trace| keeps the schedule finite for (invalid) indefinite inputs
    tr = abs(float(np.trace(H)))
    lam = 1e-8 * (1.0 + tr / dim)
    lam_max = max(1e-2 * tr, lam)
    eye = np.eye(dim)
    while True:
        try:
            c = np.linalg.cholesky(H + lam * eye)
        except np.linalg.LinAlgError:
            lam *= 10
            if lam > lam_max:
                raise SolverSingularError("GN system singular after damping") from None
            continue
        y = np.linalg.solve(c, -g)
        return np.linalg.solve(c.T, y)


def cap_direction(d, max_step=MAX_STEP):
    """Shrink ``d`` so that no component exceeds ``max_step``."""
    if max_step is None:
        return d
    m = np.max(np.abs(d), axis=-1, keepdims=True)
    return d * np.minimum(1.0, max_step / np.maximum(m, 1e-300))


def step_gauss_newton(energy: EnergyModel, a, p, a_prev=None, alpha_max=1.0,
                      counter: GNCounter | None = None, max_step=MAX_STEP):
    """One damped Gauss-Newton step with backtracking.

    Near singular configurations the undamped direction can be huge, so it
    is capped at ``max_step`` per component before the line search.
    Returns ``(a_new, alpha_used)``; ``alpha_used == 0`` means no decrease was
    found and ``a_new == a``.
    """
    if counter is not None:
        counter.consume(1)
    a = np.asarray(a, dtype=float)
    e0, g, H = energy.evaluate(a, p, a_prev)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite energy gradient")
    d = cap_direction(damped_solve(H, g), max_step)
    alpha = line_search(energy, a, d, p, a_prev, alpha_max, e0=e0)
    return a + alpha * d, alpha


def _damped_solve_batch(H, g):
    M, dim = g.shape
    tr = np.abs(np.trace(H, axis1=1, axis2=2))
    lam = 1e-8 * (1.0 + tr / dim)
    Hd = H + lam[:, None, None] * np.eye(dim)
    try:
        np.linalg.cholesky(Hd)
    except np.linalg.LinAlgError:
        # some sample needs escalation; fall back to the per-sample path
        return np.stack([damped_solve(H[m], g[m]) for m in range(M)])
    return -np.linalg.solve(Hd, g[..., None])[..., 0]


def step_gauss_newton_batch(energy: EnergyModel, A, P, A_prev=None, alpha_max=1.0,
                            counter: GNCounter | None = None, max_step=MAX_STEP):
    """Vectorised :func:`step_gauss_newton` over a batch of independent samples.

    Each sample gets its own damping and its own line search; results are
    identical in exact arithmetic to calling the single-sample step M times.
    """
    A = np.asarray(A, dtype=float)
    P = np.asarray(P, dtype=float)
    M = len(A)
    if counter is not None:
        counter.consume(M)
    if M == 0:
        return A.copy(), np.zeros(0)
    e0, g, H = energy.evaluate_batch(A, P, A_prev)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite energy gradient")
    D = cap_direction(_damped_solve_batch(H, g), max_step)
    alphas = np.zeros(M)
    pending = np.ones(M, dtype=bool)
    alpha = float(alpha_max)
    for _ in range(MAX_HALVINGS + 1):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            break
        prev = None if A_prev is None else np.asarray(A_prev)[idx]
        e = energy.value_batch(A[idx] + alpha * D[idx], P[idx], prev)
        ok = e < e0[idx]
        alphas[idx[ok]] = alpha
        pending[idx[ok]] = False
        alpha *= 0.5
    return A + alphas[:, None] * D, alphas


def solve(energy: EnergyModel, init, p, max_iters=100, tol_grad=1e-9, tol_step=1e-12,
          a_prev=None, alpha_max=1.0, counter: GNCounter | None = None,
          max_step=MAX_STEP) -> SolveReport:
    """Iterate damped Gauss-Newton steps until the gradient or step is tiny."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    start = time.perf_counter()
    a = np.asarray(init, dtype=float).copy()
    e_init = energy.value(a, p, a_prev)
    iterations = 0
    gn_calls = 0
    converged = False
    for _ in range(max_iters):
        g = energy.gradient(a, p, a_prev)
        if np.max(np.abs(g)) < tol_grad:
            converged = True
            break
        a_new, alpha = step_gauss_newton(energy, a, p, a_prev, alpha_max, counter,
                                     max_step)
        gn_calls += 1
        iterations += 1
        step = np.linalg.norm(a_new - a)
        a = a_new
        if alpha == 0.0:
            break
        if step < tol_step:
            converged = True
            break
    else:
        converged = bool(np.max(np.abs(energy.gradient(a, p, a_prev))) < tol_grad)
    return SolveReport(
        final_actions=a,
        final_energy=energy.value(a, p, a_prev),
        initial_energy=e_init,
        iterations=iterations,
        gn_calls=gn_calls,
        converged=converged,
        position_error=float(energy.position_error(a, p)),
        wall_time=time.perf_counter() - start,
    )
