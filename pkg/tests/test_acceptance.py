"""The ten acceptance criteria, one PASS/FAIL line each.

Training runs are shared between criteria through a small in-process cache.
The full suite trains 4 + 5 + 3 policies at the 500K GN-call budget and takes
the better part of an hour on one core.
"""
import time
from functools import lru_cache

import numpy as np
import pytest

from energy_policy.cli import main as cli_main
from energy_policy.energy import IkEnergy, KtoEnergy
from energy_policy.eval import landscape_grid, warm_start_benchmark
from energy_policy.kinematics import ChainSpec
from energy_policy.policy import (energy_grad_theta, init_policy, PlainGD, apply_update,
                                  policy_actions, supervised_grad)
from energy_policy.problems import planar_ik
from energy_policy.sampling import (detect_conflicts, poisson_disk_sample_n,
                                    position_error_metric, radius_neighbors, sample_uniform)
from energy_policy.solver import damped_solve, solve
from energy_policy.training import TrainConfig, energy_min_iteration, seed_streams, train

from conftest import central_diff, rel_err

BUDGET_SAMPLES, BUDGET_STEPS = 500, 1000  # 500K GN calls, the BC labelling cost
SEEDS = (0, 1, 2)


def acceptance_config(strategy, seed):
    return TrainConfig(strategy=strategy, samples=BUDGET_SAMPLES, label_steps=BUDGET_STEPS,
                       inner_steps=8, optimizer="adam", lr=1e-3, lr_decay_at=0.7,
                       eval_every=500, test_size=500, seed=seed)


@lru_cache(maxsize=None)
def trained(n_links, strategy, seed):
    problem = planar_ik(n_links)
    t0 = time.perf_counter()
    net, log = train(problem, acceptance_config(strategy, seed))
    return problem, net, log, time.perf_counter() - t0


def fd_param_grad(net, loss):
    flat = net.flat_params()

    def f(x):
        net.set_flat_params(x)
        return loss()

    g = central_diff(f, flat)
    net.set_flat_params(flat)
    return g


def test_1_gradients_match_finite_differences(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {}
    for name in ("ik", "kto", "mlp", "mlp_energy"):
        errs = []
        for i in range(200):
            n = int(rng.integers(2, 6))
            chain = ChainSpec(tuple(rng.uniform(0.05, 0.15, n)))
            if name == "ik":
                e = IkEnergy(chain, a_ref=rng.uniform(-1, 1, n), w_ref=1e-3)
                p, a = rng.uniform(-0.3, 0.3, 2), rng.uniform(-np.pi, np.pi, n)
                prev = rng.uniform(-np.pi, np.pi, n)
            elif name == "kto":
                e = KtoEnergy(chain, horizon=int(rng.integers(3, 10)))
                p = np.concatenate([rng.uniform(-1, 1, n), rng.uniform(-0.2, 0.2, 2)])
                a = rng.normal(0, 1.0, e.action_dim)
                prev = a + rng.normal(0, 0.1, e.action_dim)
            if name in ("ik", "kto"):
                errs.append(rel_err(e.gradient(a, p, prev),
                                    central_diff(lambda x: e.value(x, p, prev), a)))
                continue
            enc = "direct" if name == "mlp_energy" or i % 2 else "sincos"
            net = init_policy(2, 3, (16, 16), enc, rng)
            P = rng.uniform(-1, 1, (5, 2))
            if name == "mlp":
                T = rng.normal(size=(5, net.out_dim))
                _, grads = supervised_grad(net, P, T)
                fd = fd_param_grad(net, lambda: supervised_grad(net, P, T)[0])
            else:
                W = rng.normal(size=(5, 3))
                # mean of the linear functional W . a has gradient W / M per sample
                grads = energy_grad_theta(net, P, W)
                fd = fd_param_grad(net, lambda: float(np.mean(np.sum(
                    W * policy_actions(net, P), axis=1))))
            errs.append(rel_err(np.concatenate([g.ravel() for g in grads]), fd))
        worst[name] = max(errs)
    wall = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and wall < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    acceptance_report(1, ok, f"worst rel. error over 200 instances each: {detail}; {wall:.1f} s")


def test_2_gauss_newton_directions_descend(acceptance_report):
    rng = np.random.default_rng(2)
    worst_asym, worst_slope = 0.0, -np.inf
    for i in range(1000):
        n = int(rng.integers(2, 6))
        chain = ChainSpec.uniform(n)
        if i % 2:
            e = IkEnergy(chain)
            p, a = rng.uniform(-0.3, 0.3, 2), rng.uniform(-np.pi, np.pi, n)
        else:
            e = KtoEnergy(chain, horizon=int(rng.integers(3, 31)))
            p = np.concatenate([rng.uniform(-1, 1, n), rng.uniform(-0.2, 0.2, 2)])
            a = rng.normal(0, 1.5, e.action_dim)
        _, g, H = e.evaluate(a, p, a + rng.normal(0, 0.1, a.shape))
        worst_asym = max(worst_asym, float(np.max(np.abs(H - H.T))))
        if np.linalg.norm(g) > 0:
            d = damped_solve(H, g)
            worst_slope = max(worst_slope, float(g @ d) / (np.linalg.norm(g) * np.linalg.norm(d)))
    ok = worst_asym < 1e-12 and worst_slope < 0
    acceptance_report(2, ok, f"max asymmetry {worst_asym:.1e}, max cos(grad, d) "
                             f"{worst_slope:.2e} over 1000 IK/KTO states")


def test_3_equivalence_theorem(acceptance_report):
    rng = np.random.default_rng(3)
    e = IkEnergy(ChainSpec.uniform(2))
    net = init_policy(2, 2, (16,), "direct", rng)
    twin = net.copy()
    P = rng.uniform(-0.25, 0.25, (64, 2))
    lr, alpha = 0.05, 0.2
    cfg = TrainConfig(strategy="em_static", target_order="first", alpha_a=alpha,
                      target_line_search=False, inner_steps=1, hidden=(16,),
                      encoding="direct")
    energy_min_iteration(net, P, e, cfg, PlainGD(lr))
    A = policy_actions(twin, P)
    dE = np.stack([e.gradient(a, p) for a, p in zip(A, P)])
    apply_update(twin, energy_grad_theta(twin, P, dE), lr=lr * alpha)
    diff = float(np.max(np.abs(net.flat_params() - twin.flat_params())))
    acceptance_report(3, diff < 1e-10, f"max |theta_EM - theta_direct| = {diff:.1e}")


def test_4_per_instance_solver(acceptance_report):
    problem = planar_ik(2)
    e = problem.energy
    P = sample_uniform(problem.domain, 1000, np.random.default_rng(4)).points
    t0 = time.perf_counter()
    reports = [solve(e, e.default_actions(p), p, max_iters=100) for p in P]
    wall = time.perf_counter() - t0
    share = np.mean([r.position_error < 1e-6 for r in reports])
    ok = share >= 0.99 and wall < 5
    acceptance_report(4, ok, f"{share:.1%} below 1e-6 m within 100 iterations, "
                             f"max {max(r.iterations for r in reports)} iterations, {wall:.2f} s")


def test_5_energy_minimisation_reaches_2mm(acceptance_report):
    parts, ok = [], True
    for n in (2, 3, 4, 5):
        _, _, log, wall = trained(n, "em_incremental_reject", 0)
        err = log.final_mean_error
        ok &= err <= 2e-3 and wall <= 15 * 60
        parts.append(f"{n}-link {err * 1e3:.2f} mm ({wall:.0f} s)")
    acceptance_report(5, ok, "mean test error at 500K GN calls: " + ", ".join(parts))


def high_error_fraction(problem, net):
    return landscape_grid(net, problem.energy).high_error_fraction(0.01)


def test_6_landscape_ordering(acceptance_report):
    parts, wins = [], 0
    for seed in SEEDS:
        problem, bc, _, _ = trained(2, "bc", seed)
        _, em, _, _ = trained(2, "em_incremental_reject", seed)
        f_bc, f_em = high_error_fraction(problem, bc), high_error_fraction(problem, em)
        wins += f_em < f_bc
        parts.append(f"seed {seed}: EM {f_em:.4f} vs BC {f_bc:.4f}")
    acceptance_report(6, wins == len(SEEDS), "in-disk share of cells > 10 mm: "
                      + "; ".join(parts))


def elbow(p, branch, l1=0.15, l2=0.15):
    x, y = p
    c2 = (x * x + y * y - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    q2 = branch * np.arccos(np.clip(c2, -1, 1))
    return np.array([np.arctan2(y, x) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2)), q2])


def test_7_conflict_detection(acceptance_report):
    problem = planar_ik(2)
    metric = lambda pa, ta: position_error_metric(pa, ta, problem.energy)  # noqa: E731
    parts, ok = [], True
    for size in (512, 256, 128, 64, 32):
        s = poisson_disk_sample_n(problem.domain, size, np.random.default_rng(7))
        P, r = s.points, 4 * s.pds_radius
        branch = np.where(P[:, 0] < 0, 1, -1)
        planted = detect_conflicts(P, np.array([elbow(p, b) for p, b in zip(P, branch)]), r,
                                   metric, 5e-3)
        boundary = np.array([np.any(branch[nb] != branch[m])
                             for m, nb in enumerate(radius_neighbors(P, r))])
        share = planted.flags[boundary].mean()
        # single-branch labels: the only remaining conflict is the origin singularity
        single = detect_conflicts(P, np.array([elbow(p, 1) for p in P]), r, metric, 5e-3)
        origin = single.flags[np.argmin(np.linalg.norm(P, axis=1))]
        ok &= share >= 0.9 and origin
        parts.append(f"{size}: {share:.0%}{'' if origin else ' (origin missed)'}")
    acceptance_report(7, ok, "boundary samples flagged per test size " + ", ".join(parts)
                      + ("; origin flagged at every size" if ok else ""))


def test_8_warm_start(acceptance_report):
    problem, net, _, _ = trained(2, "em_incremental_reject", 0)
    rng = np.random.default_rng(seed_streams(0)["warmstart"])
    P = poisson_disk_sample_n(problem.domain, 1000, rng).points
    s, _ = warm_start_benchmark(net, P, problem.energy)
    ok = s["iteration_ratio"] <= 0.25 and s["warm_pos_error_mean_m"] <= 1e-3
    acceptance_report(8, ok, f"{s['warm_iterations_mean']:.2f} vs "
                             f"{s['default_iterations_mean']:.2f} iterations (ratio "
                             f"{s['iteration_ratio']:.3f}), warm final error "
                             f"{s['warm_pos_error_mean_m']:.1e} m, {s['failures']} failures")


def test_9_budget_audit(acceptance_report):
    cap = BUDGET_SAMPLES * BUDGET_STEPS
    parts, ok = [], True
    for seed in SEEDS:
        used = {s: trained(2, s, seed)[2].rows[-1][1]
                for s in ("bc", "dagger", "em_incremental_reject")}
        spread = (max(used.values()) - min(used.values())) / cap
        ok &= max(used.values()) <= cap and spread <= 0.01
        parts.append(f"seed {seed}: " + "/".join(str(v) for v in used.values()))
    for n in (3, 4, 5):
        used = trained(n, "em_incremental_reject", 0)[2].rows[-1][1]
        ok &= cap * 0.99 <= used <= cap
    acceptance_report(9, ok, f"GN calls BC/Dagger/EM (cap {cap}): " + "; ".join(parts))


def test_10_determinism(acceptance_report, tmp_path):
    config = """schema_version: 1
seed: 11
output_dir: {out}
training:
  strategy: {strategy}
  samples: 40
  label_steps: 10
  max_samples: 40
network:
  optimizer: adam
eval:
  every: 20
  test_size: 100
  landscape_nx: 30
  landscape_ny: 30
"""
    same = []
    for strategy in ("bc", "dagger", "em_static", "em_dynamic", "em_incremental",
                     "em_incremental_reject"):
        blobs = []
        for run in range(2):
            out = tmp_path / f"{strategy}{run}"
            path = tmp_path / f"{strategy}{run}.yaml"
            path.write_text(config.format(out=out, strategy=strategy))
            assert cli_main(["train", "--config", str(path)]) == 0
            assert cli_main(["landscape", "--config", str(path)]) == 0
            blobs.append([(out / f).read_bytes() for f in ("trainlog.csv", "landscape.csv")])
        same.append(blobs[0] == blobs[1])
    acceptance_report(10, all(same), f"{sum(same)}/{len(same)} strategies re-ran to "
                                     "byte-identical trainlog.csv and landscape.csv")
