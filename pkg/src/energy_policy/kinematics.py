"""Planar serial-chain forward kinematics.

Joint angles use the relative convention: joint 1 is measured from the +x
axis, every following joint from the previous link. The base sits at the
origin.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ChainSpec:
    link_lengths: tuple[float, ...]
    joint_limits: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.link_lengths)
        if len(lengths) == 0:
            raise ValueError("chain needs at least one link")
        if any(not np.isfinite(x) or x <= 0 for x in lengths):
            raise ValueError(f"link lengths must be positive, got {lengths}")
        limits = self.joint_limits
        if len(limits) == 0:
            limits = tuple((-np.pi, np.pi) for _ in lengths)
        limits = tuple((float(lo), float(hi)) for lo, hi in limits)
        if len(limits) != len(lengths):
            raise ValueError("need one joint limit per link")
        for lo, hi in limits:
            if not lo < hi:
                raise ValueError(f"joint limit lower must be < upper, got {(lo, hi)}")
        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "joint_limits", limits)

    @property
    def n_links(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.link_lengths)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.joint_limits])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.joint_limits])

    @classmethod
    def uniform(cls, n_links: int, reach: float = 0.3) -> "ChainSpec":
        """Chain of ``n_links`` equal links with total length ``reach``."""
        if n_links < 1:
            raise ValueError("n_links must be >= 1")
        return cls(tuple([reach / n_links] * n_links))


def _check_dim(chain: ChainSpec, q: np.ndarray) -> None:
    if q.shape[-1] != chain.n_links:
        raise ValueError(
            f"expected {chain.n_links} joint angles, got shape {q.shape}")


def forward_kinematics(chain: ChainSpec, q) -> np.ndarray:
    """End-effector position for joint angles ``q``.

    ``q`` may be a single configuration of shape (n,) or a batch (M, n);
    the result has shape (2,) or (M, 2).
    """
    q = np.asarray(q, dtype=float)
    _check_dim(chain, q)
    phi = np.cumsum(q, axis=-1)
    L = chain.lengths
    return np.stack([np.sum(L * np.cos(phi), axis=-1),
                     np.sum(L * np.sin(phi), axis=-1)], axis=-1)


def fk_jacobian(chain: ChainSpec, q) -> np.ndarray:
    """Jacobian of :func:`forward_kinematics`, shape (2, n) or (M, 2, n)."""
    q = np.asarray(q, dtype=float)
    _check_dim(chain, q)
    phi = np.cumsum(q, axis=-1)
    L = chain.lengths
    # column j sums over links i >= j: reversed cumulative sum
    xs = np.cumsum((L * np.cos(phi))[..., ::-1], axis=-1)[..., ::-1]
    ys = np.cumsum((L * np.sin(phi))[..., ::-1], axis=-1)[..., ::-1]
    return np.stack([-ys, xs], axis=-2)


def joint_positions(chain: ChainSpec, q) -> np.ndarray:
    """Positions of the base and every joint tip, shape (n + 1, 2)."""
    q = np.asarray(q, dtype=float)
    _check_dim(chain, q)
    phi = np.cumsum(q)
    steps = chain.lengths[:, None] * np.stack([np.cos(phi), np.sin(phi)], -1)
    return np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])


def wrap_angle(theta):
    """Map angles to (-pi, pi]; -pi maps to pi."""
    theta = np.asarray(theta, dtype=float)
    out = np.pi - np.mod(np.pi - theta, 2 * np.pi)
    if out.ndim == 0:
        return float(out)
    return out
