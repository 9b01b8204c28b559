"""Energies over action trajectories, with gradients and Gauss-Newton Hessians.

Every energy is a sum of squared residuals plus (for trajectories) a soft
barrier, so the Gauss-Newton Hessian ``2 J^T J + barrier curvature`` is
positive semidefinite by construction.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .kinematics import ChainSpec, fk_jacobian, forward_kinematics


# ---------------------------------------------------------------------------
# barrier
# ---------------------------------------------------------------------------

def _barrier_arrays(x, lower, upper, margin, stiffness):
    x = np.asarray(x, dtype=float)
    lo = lower + margin
    hi = upper - margin
    if np.any(np.asarray(lo) >= np.asarray(hi)):
        raise ValueError(
            f"degenerate barrier interval: [{lower}, {upper}] with margin {margin}")
    h = np.asarray(margin, dtype=float)
    s = float(stiffness)
    # excess beyond the active interval, whichever side
    e = np.maximum(x - hi, 0.0) + np.maximum(lo - x, 0.0)
    sign = np.where(x > hi, 1.0, np.where(x < lo, -1.0, 0.0))
    h = np.broadcast_to(h, e.shape)
    hs = np.where(h > 0, h, 1.0)
    cubic = e < h
    ec = np.minimum(e, h)
    v = np.where(cubic, s * ec**3 / (3 * hs), s * (e - h / 2) ** 2 + s * h * h / 12)
    d1 = np.where(cubic, s * ec**2 / hs, 2 * s * (e - h / 2))
    d2 = np.where(cubic, 2 * s * ec / hs, np.where(e > 0, 2 * s, 0.0))
    return v, sign * d1, d2


def bilateral_barrier(x, lower, upper, margin=0.0, stiffness=1.0):
    """Soft two-sided penalty, zero on ``[lower + margin, upper - margin]``.

    Outside the active interval the penalty starts as a cubic over a band
    of width ``margin`` and continues as ``stiffness * excess**2`` shifted to
    stay C2 at the join. With ``margin == 0`` it is a plain one-sided
    quadratic. Returns ``(value, first derivative, second derivative)``;
    arrays are handled elementwise.
    """
    v, d1, d2 = _barrier_arrays(x, lower, upper, margin, stiffness)
    if v.ndim == 0:
        return float(v), float(d1), float(d2)
    return v, d1, d2


# ---------------------------------------------------------------------------
# energy interface
# ---------------------------------------------------------------------------

class EnergyModel(ABC):
    """Energy ``E(a, p)`` of an action trajectory ``a`` for input ``p``.

    ``a_prev`` is the previous policy output for the same input; when given,
    a temporal term ``w_temp * |a - a_prev|^2`` is added.
    """

    action_dim: int
    input_dim: int
    chain: ChainSpec

    @abstractmethod
    def evaluate(self, a, p, a_prev=None):
        """Return ``(value, gradient, gn_hessian)``."""

    def value(self, a, p, a_prev=None) -> float:
        return self.evaluate(a, p, a_prev)[0]

    def gradient(self, a, p, a_prev=None) -> np.ndarray:
        return self.evaluate(a, p, a_prev)[1]

    def gn_hessian(self, a, p, a_prev=None) -> np.ndarray:
        return self.evaluate(a, p, a_prev)[2]

    def evaluate_batch(self, A, P, A_prev=None):
        out = [self.evaluate(A[m], P[m], None if A_prev is None else A_prev[m])
               for m in range(len(A))]
        if not out:
            d = self.action_dim
            return np.zeros(0), np.zeros((0, d)), np.zeros((0, d, d))
        v, g, H = zip(*out)
        return np.array(v), np.array(g), np.array(H)

    def value_batch(self, A, P, A_prev=None) -> np.ndarray:
        return np.array([self.value(A[m], P[m], None if A_prev is None else A_prev[m])
                         for m in range(len(A))])

    @abstractmethod
    def target_position(self, P) -> np.ndarray:
        """Cartesian target encoded in input(s) ``P``."""

    @abstractmethod
    def end_effector(self, A) -> np.ndarray:
        """End-effector position reached by action trajectory(ies) ``A``."""

    @abstractmethod
    def default_actions(self, P) -> np.ndarray:
        """The a_ref-based initial guess used by solvers and BC labelling."""

    def position_error(self, A, P) -> np.ndarray:
        return np.linalg.norm(self.end_effector(A) - self.target_position(P), axis=-1)


# ---------------------------------------------------------------------------
# planar IK
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IkEnergyParams:
    target: np.ndarray
    a_ref: np.ndarray
    w_target: float = 1.0
    w_ref: float = 1e-8
    w_temp: float = 1e-3

    def __post_init__(self):
        if not self.w_target > 0:
            raise ValueError("w_target must be positive")
        if self.w_ref < 0 or self.w_temp < 0:
            raise ValueError("weights must be non-negative")


def ik_energy(chain: ChainSpec, q, params: IkEnergyParams, q_prev=None):
    """Planar IK energy and its derivatives.

    ``w_target |FK(q) - target|^2 + w_ref |q - a_ref|^2 + w_temp |q - q_prev|^2``
    """
    q = np.asarray(q, dtype=float)
    n = chain.n_links
    if q.shape != (n,):
        raise ValueError(f"expected {n} joint angles, got shape {q.shape}")
    a_ref = np.asarray(params.a_ref, dtype=float)
    if a_ref.shape != (n,):
        raise ValueError("a_ref has the wrong dimension")
    r = forward_kinematics(chain, q) - np.asarray(params.target, dtype=float)
    J = fk_jacobian(chain, q)
    dref = q - a_ref
    value = params.w_target * (r @ r) + params.w_ref * (dref @ dref)
    grad = 2 * params.w_target * (J.T @ r) + 2 * params.w_ref * dref
    diag = 2 * params.w_ref
    if q_prev is not None:
        q_prev = np.asarray(q_prev, dtype=float)
        if q_prev.shape != (n,):
            raise ValueError("q_prev has the wrong dimension")
        dprev = q - q_prev
        value += params.w_temp * (dprev @ dprev)
        grad = grad + 2 * params.w_temp * dprev
        diag += 2 * params.w_temp
    H = 2 * params.w_target * (J.T @ J) + diag * np.eye(n)
    return float(value), grad, H


class IkEnergy(EnergyModel):
    """IK energy where the input ``p`` is the 2-D target."""

    def __init__(self, chain: ChainSpec, a_ref=None, w_target=1.0, w_ref=1e-8,
                 w_temp=1e-3):
        self.chain = chain
        self.a_ref = (np.zeros(chain.n_links) if a_ref is None
                      else np.asarray(a_ref, dtype=float))
        if self.a_ref.shape != (chain.n_links,):
            raise ValueError("a_ref has the wrong dimension")
        IkEnergyParams(np.zeros(2), self.a_ref, w_target, w_ref, w_temp)
        self.w_target = float(w_target)
        self.w_ref = float(w_ref)
        self.w_temp = float(w_temp)
        self.action_dim = chain.n_links
        self.input_dim = 2

    def params(self, p) -> IkEnergyParams:
        return IkEnergyParams(np.asarray(p, dtype=float), self.a_ref,
                              self.w_target, self.w_ref, self.w_temp)

    def evaluate(self, a, p, a_prev=None):
        p = np.asarray(p, dtype=float)
        if p.shape != (2,):
            raise ValueError(f"IK input must be a 2-D target, got shape {p.shape}")
        return ik_energy(self.chain, a, self.params(p), a_prev)

    def value(self, a, p, a_prev=None) -> float:
        # same arithmetic as ik_energy, without the Jacobian (line searches)
        q = np.asarray(a, dtype=float)
        if q.shape != (self.action_dim,):
            raise ValueError(f"expected {self.action_dim} joint angles, got shape {q.shape}")
        r = forward_kinematics(self.chain, q) - np.asarray(p, dtype=float)
        dref = q - self.a_ref
        value = self.w_target * (r @ r) + self.w_ref * (dref @ dref)
        if a_prev is not None:
            dprev = q - np.asarray(a_prev, dtype=float)
            value += self.w_temp * (dprev @ dprev)
        return float(value)

    def evaluate_batch(self, A, P, A_prev=None):
        A = np.asarray(A, dtype=float)
        P = np.asarray(P, dtype=float)
        n = self.action_dim
        r = forward_kinematics(self.chain, A) - P
        J = fk_jacobian(self.chain, A)
        dref = A - self.a_ref
        v = self.w_target * np.sum(r * r, -1) + self.w_ref * np.sum(dref * dref, -1)
        g = 2 * self.w_target * np.einsum("mij,mi->mj", J, r) + 2 * self.w_ref * dref
        diag = 2 * self.w_ref
        if A_prev is not None:
            dprev = A - np.asarray(A_prev, dtype=float)
            v = v + self.w_temp * np.sum(dprev * dprev, -1)
            g = g + 2 * self.w_temp * dprev
            diag += 2 * self.w_temp
        H = 2 * self.w_target * np.einsum("mki,mkj->mij", J, J) + diag * np.eye(n)
        return v, g, H

    def value_batch(self, A, P, A_prev=None):
        A = np.asarray(A, dtype=float)
        r = forward_kinematics(self.chain, A) - np.asarray(P, dtype=float)
        dref = A - self.a_ref
        v = self.w_target * np.sum(r * r, -1) + self.w_ref * np.sum(dref * dref, -1)
        if A_prev is not None:
            dprev = A - np.asarray(A_prev, dtype=float)
            v = v + self.w_temp * np.sum(dprev * dprev, -1)
        return v

    def target_position(self, P):
        return np.asarray(P, dtype=float)

    def end_effector(self, A):
        return forward_kinematics(self.chain, A)

    def default_actions(self, P):
        P = np.asarray(P, dtype=float)
        if P.ndim == 1:
            return self.a_ref.copy()
        return np.tile(self.a_ref, (len(P), 1))


# ---------------------------------------------------------------------------
# planar kinematic trajectory optimisation
# ---------------------------------------------------------------------------

def backward_stencil(t: int) -> np.ndarray:
    """Second-order backward difference as a (t, t) matrix on deviations.

    Row j gives ``1.5 x_j - 2 x_{j-1} + 0.5 x_{j-2}`` with zero history, i.e.
    the trajectory is expressed relative to a configuration held still
    before the first step.
    """
    S = 1.5 * np.eye(t)
    S -= 2.0 * np.eye(t, k=-1)
    S += 0.5 * np.eye(t, k=-2)
    return S


def smoothness_sequences(traj, a_ref):
    """Velocity, acceleration and jerk stencils (per step, unscaled by dt).

    ``traj`` has shape (t, n). Velocity uses ``a_ref`` as the two history
    slots; acceleration and jerk apply the same stencil to the velocity and
    acceleration sequences with zero history.
    """
    x = np.asarray(traj, dtype=float) - np.asarray(a_ref, dtype=float)
    S = backward_stencil(len(x))
    vel = S @ x
    acc = S @ vel
    jerk = S @ acc
    return vel, acc, jerk


@dataclass(frozen=True)
class KtoEnergyParams:
    a_ref: np.ndarray
    target: np.ndarray
    horizon: int = 30
    w_target: float = 10.0
    w_reg: float = 1e-4
    w_temp: float = 1e-3
    w_vel: float = 1e-2
    w_acc: float = 1e-2
    w_jerk: float = 1e-2
    w_barrier: float = 1.0
    vel_limit: float = 3.0
    acc_limit: float = 20.0
    jerk_limit: float = 200.0
    barrier_margin: float = 0.05
    dt: float = 0.1

    def __post_init__(self):
        if self.horizon < 3:
            raise ValueError("KTO horizon must be at least 3")
        weights = (self.w_target, self.w_reg, self.w_temp, self.w_vel, self.w_acc,
                   self.w_jerk, self.w_barrier)
        if any(w < 0 for w in weights):
            raise ValueError("weights must be non-negative")
        if min(self.vel_limit, self.acc_limit, self.jerk_limit, self.dt) <= 0:
            raise ValueError("limits and dt must be positive")
        if not 0 <= self.barrier_margin < 0.5:
            raise ValueError("barrier_margin is a fraction in [0, 0.5)")


_KTO_WEIGHT_FIELDS = ("horizon", "w_target", "w_reg", "w_temp", "w_vel", "w_acc",
                      "w_jerk", "w_barrier", "vel_limit", "acc_limit", "jerk_limit",
                      "barrier_margin", "dt")


def _kto_operators(t: int, n: int):
    S = backward_stencil(t)
    S2 = S @ S
    S3 = S2 @ S
    eye = np.eye(n)
    return np.kron(S, eye), np.kron(S2, eye), np.kron(S3, eye)


def _barrier_sum(y, lower, upper, frac, stiffness):
    """Barrier summed over ``y`` with per-component bounds."""
    lower = np.broadcast_to(lower, y.shape)
    upper = np.broadcast_to(upper, y.shape)
    margin = frac * (upper - lower) / 2
    v, d1, d2 = _barrier_arrays(y, lower, upper, margin, stiffness)
    return float(np.sum(v)), d1, d2


def kto_energy(chain: ChainSpec, traj, params: KtoEnergyParams, traj_prev=None,
               _ops=None):
    """Planar kinematic trajectory energy and its derivatives.

    ``traj`` is the flat vector ``[q_0, ..., q_{t-1}]``; the target is applied to
    the final configuration.
    """
    n = chain.n_links
    t = params.horizon
    traj = np.asarray(traj, dtype=float)
    if traj.shape != (t * n,):
        raise ValueError(f"expected trajectory of {t * n} entries, got {traj.shape}")
    a_ref = np.asarray(params.a_ref, dtype=float)
    if a_ref.shape != (n,):
        raise ValueError("a_ref has the wrong dimension")
    Sv, Sa, Sj = _kto_operators(t, n) if _ops is None else _ops
    x = traj - np.tile(a_ref, t)
    dim = t * n

    value = 0.0
    grad = np.zeros(dim)
    H = np.zeros((dim, dim))

    # target on the final configuration
    q_last = traj[-n:]
    r = forward_kinematics(chain, q_last) - np.asarray(params.target, dtype=float)
    J = fk_jacobian(chain, q_last)
    value += params.w_target * (r @ r)
    grad[-n:] += 2 * params.w_target * (J.T @ r)
    H[-n:, -n:] += 2 * params.w_target * (J.T @ J)

    dt = params.dt
    seqs = []
    for w, op in ((params.w_vel, Sv), (params.w_acc, Sa), (params.w_jerk, Sj)):
        y = op @ x
        seqs.append(y)
        value += w * (y @ y)
        grad += 2 * w * (op.T @ y)
        H += 2 * w * (op.T @ op)

    value += params.w_reg * (x @ x)
    grad += 2 * params.w_reg * x
    H[np.diag_indices(dim)] += 2 * params.w_reg

    if traj_prev is not None:
        traj_prev = np.asarray(traj_prev, dtype=float)
        if traj_prev.shape != traj.shape:
            raise ValueError("traj_prev has the wrong dimension")
        d = traj - traj_prev
        value += params.w_temp * (d @ d)
        grad += 2 * params.w_temp * d
        H[np.diag_indices(dim)] += 2 * params.w_temp

    if params.w_barrier > 0:
        wb = params.w_barrier
        frac = params.barrier_margin
        lower = np.tile(chain.lower, t)
        upper = np.tile(chain.upper, t)
        v, d1, d2 = _barrier_sum(traj, lower, upper, frac, 1.0)
        value += wb * v
        grad += wb * d1
        H[np.diag_indices(dim)] += wb * d2
        limits = (params.vel_limit, params.acc_limit, params.jerk_limit)
        for k, (y, op, lim) in enumerate(zip(seqs, (Sv, Sa, Sj), limits)):
            scale = dt ** -(k + 1)
            v, d1, d2 = _barrier_sum(scale * y, -lim, lim, frac, 1.0)
            value += wb * v
            grad += wb * scale * (op.T @ d1)
            H += wb * scale**2 * (op.T @ (d2[:, None] * op))
    # BLAS products are symmetric only up to rounding; make it exact
    H = 0.5 * (H + H.T)
    return float(value), grad, H


class KtoEnergy(EnergyModel):
    """Trajectory energy where ``p = [a_ref (n), target (2)]``."""

    def __init__(self, chain: ChainSpec, **weights):
        unknown = set(weights) - set(_KTO_WEIGHT_FIELDS)
        if unknown:
            raise ValueError(f"unknown KTO settings: {sorted(unknown)}")
        self.chain = chain
        self.settings = weights
        n = chain.n_links
        probe = KtoEnergyParams(np.zeros(n), np.zeros(2), **weights)
        self.horizon = probe.horizon
        self.action_dim = self.horizon * n
        self.input_dim = n + 2
        self._ops = _kto_operators(self.horizon, n)

    def params(self, p) -> KtoEnergyParams:
        p = np.asarray(p, dtype=float)
        n = self.chain.n_links
        if p.shape != (n + 2,):
            raise ValueError(f"KTO input must have {n + 2} entries, got {p.shape}")
        return KtoEnergyParams(p[:n], p[n:], **self.settings)

    def evaluate(self, a, p, a_prev=None):
        return kto_energy(self.chain, a, self.params(p), a_prev, _ops=self._ops)

    def target_position(self, P):
        return np.asarray(P, dtype=float)[..., self.chain.n_links:]

    def end_effector(self, A):
        A = np.asarray(A, dtype=float)
        return forward_kinematics(self.chain, A[..., -self.chain.n_links:])

    def default_actions(self, P):
        P = np.asarray(P, dtype=float)
        n = self.chain.n_links
        return np.tile(P[..., :n], self.horizon)
