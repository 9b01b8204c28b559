"""Behavioural cloning, Dagger and energy-minimisation trainers.

All three trainers draw Gauss-Newton evaluations from one audited
:class:`~energy_policy.solver.GNCounter`, so runs with the same cap are
compute-matched.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .eval import eval_test_set
from .policy import (PolicyNet, actions_to_targets, make_optimizer, policy_actions,
                     supervised_grad)
from .problems import Problem
from .sampling import (detect_conflicts, incremental_expand, poisson_disk_sample_n,
                       position_error_metric, resample_dynamic, select_seed)
from .solver import (BudgetExhausted, GNCounter, SolverSingularError, line_search,
                     step_gauss_newton, step_gauss_newton_batch)

log = logging.getLogger(__name__)

STRATEGIES = ("bc", "dagger", "em_static", "em_dynamic", "em_incremental",
              "em_incremental_reject")
TRAINLOG_COLUMNS = ["theta_steps", "gn_calls", "mean_pos_error_m", "std_pos_error_m"]


@dataclass
class TrainConfig:
    strategy: str = "em_incremental_reject"
    samples: int = 500            # M: training inputs (BC, static EM, Dagger pool)
    label_steps: int = 100        # K: GN steps per label; budget defaults to M * K
    inner_steps: int = 8          # N: supervised steps per outer iteration
    budget: int | None = None
    fit_steps: int | None = None  # BC supervised steps; defaults to K * N
    optimizer: str = "plain_gd"
    lr: float = 1e-3
    lr_decay_at: float | None = None  # progress fraction at which lr is scaled
    lr_decay: float = 0.1
    target_order: str = "second"
    alpha_a: float = 1.0
    target_line_search: bool = True
    eps: float = 5e-3
    max_samples: int = 500        # M_max for incremental growth
    expand_k: int = 8
    resample: str = "pds"
    search_radius: float | None = None  # defaults to twice the PDS spacing
    eval_every: int = 50
    test_size: int = 500
    seed: int = 0
    hidden: tuple = (512, 512)
    encoding: str = "sincos"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.target_order not in ("first", "second"):
            raise ValueError("target_order must be 'first' or 'second'")
        for name in ("samples", "label_steps", "inner_steps", "eval_every",
                     "max_samples", "expand_k", "test_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.budget_cap <= 0:
            raise ValueError("budget cap must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        self.hidden = tuple(self.hidden)

    @property
    def budget_cap(self) -> int:
        return self.budget if self.budget is not None else self.samples * self.label_steps


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)        # (steps, gn_calls, mean, std)
    wall: list = field(default_factory=list)        # seconds since start, per row
    iterations: list = field(default_factory=list)  # per outer-iteration bookkeeping
    events: list = field(default_factory=list)

    def record(self, steps, gn_calls, mean, std, wall):
        self.rows.append((int(steps), int(gn_calls), float(mean), float(std)))
        self.wall.append(float(wall))

    @property
    def final_mean_error(self) -> float:
        return self.rows[-1][2]

    def to_csv(self, path) -> None:
        """Deterministic log; wall-clock time goes to :meth:`timing_to_csv`."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAINLOG_COLUMNS)
            for s, g, m, sd in self.rows:
                w.writerow([s, g, repr(m), repr(sd)])

    def timing_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta_steps", "wall_time_s"])
            for (s, *_), t in zip(self.rows, self.wall):
                w.writerow([s, f"{t:.3f}"])


def seed_streams(seed: int) -> dict:
    """Independent child seeds of one root seed, one per subsystem."""
    names = ("init", "sampling", "test", "warmstart", "conflicts")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def test_set(problem: Problem, size: int, seed: int) -> np.ndarray:
    """The Poisson-disk test inputs a run with ``seed`` evaluates on."""
    rng = np.random.default_rng(seed_streams(seed)["test"])
    return poisson_disk_sample_n(problem.domain, size, rng).points


def budget_tracker(cap=None) -> GNCounter:
    return GNCounter(cap)


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

def compute_target_first_order(a, energy, p, alpha_a, a_prev=None, use_line_search=True):
    """``a - alpha * grad E``; with line search the step is halved until E drops.

    If no decrease is found the target is ``a`` itself.
    """
    a = np.asarray(a, dtype=float)
    g = energy.gradient(a, p, a_prev)
    if not use_line_search:
        return a - alpha_a * g
    alpha = line_search(energy, a, -g, p, a_prev, alpha_max=alpha_a)
    if alpha == 0.0 and np.any(g != 0):
        log.debug("first-order target: line search failed, using a no-op target")
    return a - alpha * g


def compute_target_second_order(a, energy, p, a_prev=None, counter=None):
    """One damped GN step from the policy output ``a``.

    If the GN system is singular the step is retried from the default guess.
    """
    try:
        return step_gauss_newton(energy, a, p, a_prev, counter=counter)[0]
    except SolverSingularError:
        log.warning("singular GN system at policy output; retrying from default init")
        return step_gauss_newton(energy, energy.default_actions(p), p, None,
                                 counter=counter)[0]


def second_order_targets(energy, A, P, A_prev=None, counter=None):
    """Batched :func:`compute_target_second_order`; consumes ``len(P)`` budget."""
    if counter is not None:
        counter.consume(len(P))
    try:
        T, _ = step_gauss_newton_batch(energy, A, P, A_prev)
    except SolverSingularError:
        T = np.stack([compute_target_second_order(
            A[m], energy, P[m], None if A_prev is None else A_prev[m])
            for m in range(len(P))])
    if __debug__ and len(P):
        e_t = energy.value_batch(T, P, A_prev)
        e_a = energy.value_batch(A, P, A_prev)
        fallback = ~(e_t <= e_a)
        assert np.all(~fallback | (e_t <= energy.value_batch(
            energy.default_actions(P), P) + 1e-12)), "target energy increased"
    return T


def first_order_targets(energy, A, P, alpha_a, A_prev=None, use_line_search=True):
    return np.stack([compute_target_first_order(
        A[m], energy, P[m], alpha_a, None if A_prev is None else A_prev[m],
        use_line_search) for m in range(len(P))])


# ---------------------------------------------------------------------------
# shared machinery
# ---------------------------------------------------------------------------

class _Run:
    """Bookkeeping common to all trainers: rng streams, evaluation, lr schedule."""

    def __init__(self, problem: Problem, cfg: TrainConfig, test_points=None):
        self.problem = problem
        self.cfg = cfg
        streams = seed_streams(cfg.seed)
        self.rng = np.random.default_rng(streams["sampling"])
        self.net = problem.new_policy(np.random.default_rng(streams["init"]), cfg.hidden,
                                      cfg.encoding)
        if test_points is None:
            test_points = test_set(problem, cfg.test_size, cfg.seed)
        self.test = np.asarray(test_points, dtype=float)
        self.opt = make_optimizer(cfg.optimizer, cfg.lr)
        self.counter = GNCounter(cfg.budget_cap)
        self.log = TrainLog()
        self.steps = 0
        self.t0 = time.perf_counter()
        self._decayed = False
        self.evaluate()

    def evaluate(self):
        mean, std, _ = eval_test_set(self.net, self.test, self.problem.energy)
        self.log.record(self.steps, self.counter.count, mean, std,
                        time.perf_counter() - self.t0)
        log.info("%s: %d theta steps, %d GN calls, test error %.3f mm", self.cfg.strategy,
                 self.steps, self.counter.count, mean * 1e3)

    def progress(self, fraction):
        c = self.cfg
        if c.lr_decay_at is not None and not self._decayed and fraction >= c.lr_decay_at:
            self.opt.lr *= c.lr_decay
            self._decayed = True

    def fit(self, P, T_out, n_steps):
        """``n_steps`` full-batch supervised steps towards output-space targets."""
        for _ in range(n_steps):
            _, grads = supervised_grad(self.net, P, T_out)
            self.opt.step(self.net, grads)
            self.steps += 1
            if self.steps % self.cfg.eval_every == 0:
                self.evaluate()

    def finish(self):
        if not self.log.rows or self.log.rows[-1][0] != self.steps:
            self.evaluate()
        return self.net, self.log


# ---------------------------------------------------------------------------
# trainers
# ---------------------------------------------------------------------------

def train_bc(problem: Problem, cfg: TrainConfig, test_points=None):
    """Label M Poisson-disk inputs with K GN steps from the default guess, then fit."""
    run = _Run(problem, cfg, test_points)
    energy = problem.energy
    P = poisson_disk_sample_n(problem.domain, cfg.samples, run.rng).points
    A = energy.default_actions(P)
    try:
        for _ in range(cfg.label_steps):
            run.counter.consume(len(P))
            A, _ = step_gauss_newton_batch(energy, A, P)
    except BudgetExhausted as exc:
        run.log.events.append(f"labelling aborted: {exc}")
        log.warning("BC labelling aborted: %s", exc)
        return run.finish()
    T_out = actions_to_targets(run.net, A)
    n_fit = cfg.fit_steps if cfg.fit_steps is not None else cfg.label_steps * cfg.inner_steps
    for i in range(n_fit):
        run.progress(i / n_fit)
        run.fit(P, T_out, 1)
    run.log.iterations.append({"labels": len(P), "gn_calls": run.counter.count})
    return run.finish()


def train_dagger(problem: Problem, cfg: TrainConfig, test_points=None):
    """One new input per iteration, relabelled from the policy's own output."""
    run = _Run(problem, cfg, test_points)
    energy = problem.energy
    K = cfg.label_steps
    pool = poisson_disk_sample_n(problem.domain, cfg.samples, run.rng).points
    pool = pool[run.rng.permutation(len(pool))]
    P_agg, A_agg = [], []
    for p in pool:
        if run.counter.remaining < K:
            break
        a = policy_actions(run.net, p)
        for _ in range(K):
            run.counter.consume(1)
            a, _ = step_gauss_newton_batch(energy, a[None], p[None])
            a = a[0]
        P_agg.append(p)
        A_agg.append(a)
        P = np.array(P_agg)
        run.progress(run.counter.count / run.counter.cap)
        run.fit(P, actions_to_targets(run.net, np.array(A_agg)), cfg.inner_steps)
        run.log.iterations.append({"aggregate": len(P), "gn_calls": run.counter.count})
    return run.finish()


def energy_min_iteration(net: PolicyNet, P, energy, cfg: TrainConfig, optimizer,
                         counter=None, A_prev=None, on_step=None):
    """One outer iteration: converging targets, optional rejection, N fits.

    Returns ``(kept_indices, report)``; ``report`` is None without rejection.
    """
    A = policy_actions(net, P)
    if cfg.target_order == "second":
        T = second_order_targets(energy, A, P, A_prev, counter)
    else:
        if counter is not None:
            counter.consume(len(P))
        T = first_order_targets(energy, A, P, cfg.alpha_a, A_prev, cfg.target_line_search)
    report = None
    keep = np.arange(len(P))
    if cfg.strategy == "em_incremental_reject":
        radius = cfg.search_radius
        report = detect_conflicts(
            P, T, radius, lambda pa, ta: position_error_metric(pa, ta, energy),
            cfg.eps, angular=True)
        keep = report.kept
    if len(keep) == 0:
        log.warning("all samples rejected; skipping supervised steps")
        return keep, report
    T_out = actions_to_targets(net, T[keep])
    for _ in range(cfg.inner_steps):
        _, grads = supervised_grad(net, P[keep], T_out)
        optimizer.step(net, grads)
        if on_step is not None:
            on_step()
    return keep, report


def train_energy_min(problem: Problem, cfg: TrainConfig, test_points=None):
    """Energy minimisation with static, dynamic or incremental sampling."""
    if not cfg.strategy.startswith("em_"):
        raise ValueError(f"{cfg.strategy!r} is not an energy-minimisation strategy")
    run = _Run(problem, cfg, test_points)
    energy = problem.energy
    domain = problem.domain
    spacing = None
    if cfg.strategy == "em_static":
        P = poisson_disk_sample_n(domain, cfg.samples, run.rng)
        spacing = 2 * P.pds_radius
        P = P.points
    elif cfg.strategy == "em_dynamic":
        P = None
    else:
        pool_set = poisson_disk_sample_n(domain, cfg.max_samples, run.rng)
        spacing = 2 * pool_set.pds_radius
        pool = pool_set.points
        seed = select_seed(pool, run.net, energy)
        P = seed[None, :]
    if cfg.strategy == "em_incremental_reject" and cfg.search_radius is None:
        cfg = replace(cfg, search_radius=2 * spacing)

    def on_step():
        run.steps += 1
        if run.steps % cfg.eval_every == 0:
            run.evaluate()

    prev_net = None
    iteration = 0
    while run.counter.remaining > 0:
        if cfg.strategy == "em_dynamic":
            P = resample_dynamic(domain, cfg.samples, run.rng, cfg.resample).points
        elif cfg.strategy.startswith("em_incremental") and iteration > 0:
            P = incremental_expand(P, pool, cfg.expand_k, max_size=cfg.max_samples).points
        batch = P[: int(min(len(P), run.counter.remaining))]
        A_prev = None if prev_net is None else policy_actions(prev_net, batch)
        run.progress(run.counter.count / run.counter.cap)
        snapshot = run.net.copy()
        keep, report = energy_min_iteration(run.net, batch, energy, cfg, run.opt,
                                            run.counter, A_prev, on_step)
        prev_net = snapshot
        run.log.iterations.append({
            "iteration": iteration, "samples": len(batch), "kept": len(keep),
            "rejected": (report.rejected.tolist() if report is not None else []),
            "gn_calls": run.counter.count})
        if len(keep) == 0:
            run.log.events.append(f"iteration {iteration}: all samples rejected")
        iteration += 1
    return run.finish()


def train(problem: Problem, cfg: TrainConfig, test_points=None):
    """Dispatch on ``cfg.strategy``."""
    if cfg.strategy == "bc":
        return train_bc(problem, cfg, test_points)
    if cfg.strategy == "dagger":
        return train_dagger(problem, cfg, test_points)
    return train_energy_min(problem, cfg, test_points)
