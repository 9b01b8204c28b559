"""Command-line driver: ``energy-policy <subcommand> --config run.yaml``.

Exit codes: 0 success, 2 missing/invalid input or config, 3 unusable
checkpoint (unreadable, bad magic, or shape mismatch with the config).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ConfigError, ExperimentConfig, load_config
from .eval import (eval_test_set, landscape_grid, warm_start_benchmark, write_test_csv,
                   write_warmstart_csv)
from .policy import CheckpointError, load_policy, policy_actions, save_policy
from .sampling import (closest_pair_radius, detect_conflicts, poisson_disk_sample_n,
                       position_error_metric, read_samples_csv, write_samples_csv)
from .solver import solve
from .training import second_order_targets, seed_streams, test_set, train

EXIT_OK, EXIT_INPUT, EXIT_CHECKPOINT = 0, 2, 3

log = logging.getLogger("energy_policy")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _config(args) -> ExperimentConfig:
    path = Path(args.config)
    if not path.is_file():
        raise CliError(f"config file not found: {path}", EXIT_INPUT)
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint(args, cfg, problem):
    path = args.checkpoint or str(Path(cfg.output_dir) / "policy.json")
    if not Path(path).is_file():
        raise CliError(f"checkpoint not found: {path}", EXIT_CHECKPOINT)
    try:
        net = load_policy(path)
    except (CheckpointError, OSError, ValueError, KeyError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_CHECKPOINT) from None
    if net.input_dim != problem.input_dim or net.action_dim != problem.action_dim:
        raise CliError(
            f"{path}: policy maps {net.input_dim} -> {net.action_dim} but the configured "
            f"problem needs {problem.input_dim} -> {problem.action_dim}", EXIT_CHECKPOINT)
    return net


def cmd_train(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    out = _out_dir(cfg)
    net, tlog = train(problem, cfg.train_config())
    tlog.to_csv(out / "trainlog.csv")
    tlog.timing_to_csv(out / "timing.csv")
    save_policy(net, args.checkpoint or out / "policy.json")
    steps, calls, mean, std = tlog.rows[-1]
    print(f"final mean test position error: {mean * 1e3:.4f} mm (std {std * 1e3:.4f} mm, "
          f"{calls} GN calls, {steps} theta steps)")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    net = _checkpoint(args, cfg, problem)
    P = test_set(problem, cfg.eval.test_size, cfg.seed)
    mean, std, errors = eval_test_set(net, P, problem.energy)
    write_test_csv(_out_dir(cfg) / "test.csv", P, errors, problem.energy)
    print(f"mean {mean * 1e3:.4f} mm, std {std * 1e3:.4f} mm over {len(P)} samples")
    return EXIT_OK


def _extra_inputs(problem):
    # trajectory problems: evaluate with the reference posture at the origin
    n_extra = problem.input_dim - 2
    return np.zeros(n_extra) if n_extra else None


def cmd_landscape(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    net = _checkpoint(args, cfg, problem)
    e = cfg.eval
    grid = landscape_grid(net, problem.energy, tuple(e.landscape_box), e.landscape_nx,
                          e.landscape_ny, disk_radius=cfg.problem.disk_radius,
                          extra_inputs=_extra_inputs(problem))
    grid.to_csv(_out_dir(cfg) / "landscape.csv")
    print(f"{grid.nx * grid.ny} cells, in-disk share above 10 mm: "
          f"{grid.high_error_fraction(0.01):.4f}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    p = np.concatenate([np.zeros(problem.input_dim - 2), [args.x, args.y]])
    s = cfg.solver
    report = solve(problem.energy, problem.energy.default_actions(p), p, s.max_iters,
                   s.tol_grad, s.tol_step, alpha_max=s.alpha_max)
    ee = problem.energy.end_effector(report.final_actions)
    print(json.dumps({
        "target": [args.x, args.y],
        "final_actions": report.final_actions.tolist(),
        "end_effector": np.asarray(ee).tolist(),
        "final_energy": report.final_energy,
        "initial_energy": report.initial_energy,
        "iterations": report.iterations,
        "gn_calls": report.gn_calls,
        "converged": report.converged,
        "position_error_m": report.position_error,
        "wall_time_s": report.wall_time,
    }, indent=2))
    return EXIT_OK


def cmd_conflicts(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    net = _checkpoint(args, cfg, problem)
    energy = problem.energy
    if args.data is not None:
        if not Path(args.data).is_file():
            raise CliError(f"dataset not found: {args.data}", EXIT_INPUT)
        try:
            P = read_samples_csv(args.data, problem.input_dim)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_INPUT) from None
        spacing = None
    else:
        rng = np.random.default_rng(seed_streams(cfg.seed)["conflicts"])
        s = poisson_disk_sample_n(problem.domain, cfg.eval.test_size, rng)
        P, spacing = s.points, 2 * s.pds_radius
    radius = cfg.eval.conflict_radius
    if radius is None:
        if spacing is None:
            spacing = 2 * closest_pair_radius(P)
        radius = 2 * spacing if np.isfinite(spacing) else 1.0
    T = (second_order_targets(energy, policy_actions(net, P), P) if len(P)
         else np.zeros((0, problem.action_dim)))
    report = detect_conflicts(P, T, radius,
                              lambda pa, ta: position_error_metric(pa, ta, energy),
                              cfg.training.eps)
    write_samples_csv(_out_dir(cfg) / "conflicts.csv", P, T, report,
                      input_dim=problem.input_dim, target_dim=problem.action_dim)
    print(f"{len(report.rejected)} of {len(P)} samples flagged (radius {radius:.4g} m)")
    return EXIT_OK


def cmd_warmstart(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    net = _checkpoint(args, cfg, problem)
    rng = np.random.default_rng(seed_streams(cfg.seed)["warmstart"])
    P = poisson_disk_sample_n(problem.domain, cfg.eval.warmstart_samples, rng).points
    s = cfg.solver
    summary, rows = warm_start_benchmark(net, P, problem.energy, s.max_iters, s.tol_grad,
                                         s.tol_step)
    write_warmstart_csv(_out_dir(cfg) / "warmstart.csv", rows)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energy-policy", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, checkpoint=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
        if checkpoint:
            p.add_argument("--checkpoint", default=None,
                           help="policy checkpoint (default: <out>/policy.json)")
        p.set_defaults(func=func)
        return p

    add("train", cmd_train, "train a policy and write trainlog.csv + policy.json")
    add("eval", cmd_eval, "evaluate a checkpoint on the test set")
    add("landscape", cmd_landscape, "energy/position-error grid of a checkpoint")
    p = add("solve", cmd_solve, "solve one instance with damped Gauss-Newton",
            checkpoint=False)
    p.add_argument("x", type=float)
    p.add_argument("y", type=float)
    p = add("conflicts", cmd_conflicts, "flag conflicting samples of a checkpoint")
    p.add_argument("--data", default=None, help="CSV of inputs (columns p0, p1, ...)")
    add("warmstart", cmd_warmstart, "solver iterations from policy vs default init")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        parser.error("--seed must be non-negative")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
