"""Position-error landscapes of BC and energy minimisation at equal budget.

    python3 scripts/compare_landscapes.py --seeds 0 1 2

For every seed both strategies are trained on the 2-link problem; the grids
are written as landscape_<strategy>_s<seed>.csv and the share of in-disk cells
with error above 10 mm is printed.
"""
import argparse
from pathlib import Path

from energy_policy.eval import landscape_grid
from energy_policy.training import train

from _common import load


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default=None, help="base YAML config")
    ap.add_argument("--strategies", nargs="+", default=["bc", "em_incremental_reject"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--threshold", type=float, default=0.01, help="error threshold (m)")
    ap.add_argument("--out", default="runs/landscapes")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        for strategy in args.strategies:
            cfg = load(args.config, strategy=strategy, seed=seed)
            problem = cfg.build_problem()
            net, log = train(problem, cfg.train_config())
            e = cfg.eval
            grid = landscape_grid(net, problem.energy, tuple(e.landscape_box), e.landscape_nx,
                                  e.landscape_ny, disk_radius=cfg.problem.disk_radius)
            grid.to_csv(out / f"landscape_{strategy}_s{seed}.csv")
            print(f"seed {seed} {strategy:<22} test {log.final_mean_error * 1e3:.3f} mm, "
                  f"cells > {args.threshold * 1e3:g} mm: "
                  f"{grid.high_error_fraction(args.threshold):.4f}", flush=True)


if __name__ == "__main__":
    main()
