"""Policy evaluation: test-set errors, landscapes, warm-starting."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .policy import PolicyNet, policy_actions
from .solver import SolverSingularError, solve

LANDSCAPE_COLUMNS = ["x", "y", "energy", "pos_error_m", "in_disk"]
TEST_COLUMNS = ["index", "target_x", "target_y", "pos_error_m"]
WARMSTART_COLUMNS = ["index", "warm_iterations", "default_iterations", "warm_time_s",
                     "default_time_s", "warm_pos_error_m", "default_pos_error_m",
                     "policy_pos_error_m"]


def eval_test_set(net: PolicyNet, P, energy):
    """Per-sample end-effector error of the policy; returns (mean, std, errors)."""
    P = np.asarray(P, dtype=float)
    if len(P) == 0:
        raise ValueError("empty test set")
    err = energy.position_error(policy_actions(net, P), P)
    # population std (ddof=0)
    return float(np.mean(err)), float(np.std(err)), err


def write_test_csv(path, P, errors, energy) -> None:
    targets = energy.target_position(P)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TEST_COLUMNS)
        for m, (t, e) in enumerate(zip(targets, errors)):
            w.writerow([m, repr(float(t[0])), repr(float(t[1])), repr(float(e))])


@dataclass
class LandscapeGrid:
    box: tuple  # (xmin, xmax, ymin, ymax)
    nx: int
    ny: int
    x: np.ndarray
    y: np.ndarray
    energy: np.ndarray
    pos_error: np.ndarray
    in_disk: np.ndarray

    def high_error_fraction(self, threshold=0.01) -> float:
        """Share of in-disk cells whose position error exceeds ``threshold``."""
        inside = self.in_disk.astype(bool)
        if not inside.any():
            return 0.0
        return float(np.mean(self.pos_error[inside] > threshold))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LANDSCAPE_COLUMNS)
            for row in zip(self.x, self.y, self.energy, self.pos_error, self.in_disk):
                w.writerow([repr(float(v)) for v in row[:4]] + [int(row[4])])

    @classmethod
    def from_csv(cls, path, box, nx, ny) -> "LandscapeGrid":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0] != LANDSCAPE_COLUMNS:
            raise ValueError(f"unexpected landscape header {rows[0]}")
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, 5)
        return cls(tuple(box), nx, ny, data[:, 0], data[:, 1], data[:, 2], data[:, 3],
                   data[:, 4].astype(bool))


def landscape_grid(net: PolicyNet, energy, box=(-0.3, 0.3, -0.3, 0.3), nx=100, ny=100,
                   disk_center=(0.0, 0.0), disk_radius=0.25, extra_inputs=None) -> LandscapeGrid:
    """Evaluate energy and position error of the policy at grid-cell centres.

    Rows are ordered with x varying fastest. ``extra_inputs`` are prepended to
    each target (e.g. the reference configuration of a trajectory problem).
    """
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 cells per axis")
    xmin, xmax, ymin, ymax = box
    xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
    ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
    X, Y = np.meshgrid(xs, ys)
    targets = np.column_stack([X.ravel(), Y.ravel()])
    P = targets
    if extra_inputs is not None:
        extra = np.tile(np.asarray(extra_inputs, dtype=float), (len(targets), 1))
        P = np.hstack([extra, targets])
    A = policy_actions(net, P)
    E = energy.value_batch(A, P)
    err = energy.position_error(A, P)
    inside = np.linalg.norm(targets - np.asarray(disk_center), axis=1) <= disk_radius
    return LandscapeGrid(tuple(box), nx, ny, targets[:, 0], targets[:, 1], E, err, inside)


def warm_start_benchmark(net: PolicyNet, P, energy, max_iters=100, tol_grad=1e-9,
                         tol_step=1e-12):
    """Solve every input twice: from the policy output and from the default guess.

    Returns ``(summary, rows)``; samples where either solve fails are counted
    in ``summary['failures']`` and left out of the statistics.
    """
    P = np.asarray(P, dtype=float)
    if len(P) == 0:
        raise ValueError("empty benchmark set")
    t0 = time.perf_counter()
    A_policy = policy_actions(net, P)
    policy_time = (time.perf_counter() - t0) / len(P)
    policy_err = energy.position_error(A_policy, P)
    rows = []
    failures = 0
    for m, p in enumerate(P):
        try:
            warm = solve(energy, A_policy[m], p, max_iters, tol_grad, tol_step)
            cold = solve(energy, energy.default_actions(p), p, max_iters, tol_grad, tol_step)
        except (SolverSingularError, FloatingPointError):
            failures += 1
            continue
        rows.append([m, warm.iterations, cold.iterations, warm.wall_time + policy_time,
                     cold.wall_time, warm.position_error, cold.position_error,
                     float(policy_err[m])])
    arr = np.array([r[1:] for r in rows], dtype=float).reshape(-1, 7)
    summary = {
        "samples": len(rows),
        "failures": failures,
        "warm_iterations_mean": float(arr[:, 0].mean()) if len(rows) else float("nan"),
        "default_iterations_mean": float(arr[:, 1].mean()) if len(rows) else float("nan"),
        "warm_time_mean_s": float(arr[:, 2].mean()) if len(rows) else float("nan"),
        "default_time_mean_s": float(arr[:, 3].mean()) if len(rows) else float("nan"),
        "warm_pos_error_mean_m": float(arr[:, 4].mean()) if len(rows) else float("nan"),
        "default_pos_error_mean_m": float(arr[:, 5].mean()) if len(rows) else float("nan"),
        "policy_pos_error_mean_m": float(arr[:, 6].mean()) if len(rows) else float("nan"),
    }
    summary["iteration_ratio"] = (summary["warm_iterations_mean"]
                                  / max(summary["default_iterations_mean"], 1e-300))
    return summary, rows


def write_warmstart_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(WARMSTART_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1], r[2]] + [repr(float(v)) for v in r[3:]])
