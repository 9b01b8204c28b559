"""Solver iterations from a trained policy versus the default initial guess.

    python3 scripts/warm_start.py --checkpoint runs/ik2_em_reject/policy.json

Without --checkpoint a policy is trained first from the config.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from energy_policy.eval import warm_start_benchmark, write_warmstart_csv
from energy_policy.policy import load_policy, save_policy
from energy_policy.sampling import poisson_disk_sample_n
from energy_policy.training import seed_streams, train

from _common import load


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default=None, help="YAML config")
    ap.add_argument("--checkpoint", default=None)
    ap.add_argument("--samples", type=int, default=None, help="benchmark set size")
    ap.add_argument("--out", default="runs/warmstart")
    args = ap.parse_args()

    cfg = load(args.config)
    problem = cfg.build_problem()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        net = load_policy(args.checkpoint)
    else:
        net, _ = train(problem, cfg.train_config())
        save_policy(net, out / "policy.json")
    n = args.samples or cfg.eval.warmstart_samples
    rng = np.random.default_rng(seed_streams(cfg.seed)["warmstart"])
    P = poisson_disk_sample_n(problem.domain, n, rng).points
    s = cfg.solver
    summary, rows = warm_start_benchmark(net, P, problem.energy, s.max_iters, s.tol_grad,
                                         s.tol_step)
    write_warmstart_csv(out / "warmstart.csv", rows)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
