"""Final test error per chain length and training strategy.

    python3 scripts/reproduce_table.py --chains 2 3 4 5 --strategies em_incremental_reject bc

Writes one trainlog per run plus a summary CSV, and prints the table in mm.
"""
import argparse
import csv
import time
from pathlib import Path

from energy_policy.training import STRATEGIES, train

from _common import load

COLUMNS = ["n_links", "strategy", "seed", "mean_pos_error_m", "std_pos_error_m", "gn_calls",
           "theta_steps", "wall_time_s"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default=None, help="base YAML config")
    ap.add_argument("--chains", type=int, nargs="+", default=[2, 3, 4, 5])
    ap.add_argument("--strategies", nargs="+", default=["em_incremental_reject"],
                    choices=STRATEGIES)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default="runs/table")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for n in args.chains:
        for strategy in args.strategies:
            for seed in args.seeds:
                cfg = load(args.config, n_links=n, strategy=strategy, seed=seed)
                t0 = time.perf_counter()
                _, log = train(cfg.build_problem(), cfg.train_config())
                wall = time.perf_counter() - t0
                log.to_csv(out / f"trainlog_{n}link_{strategy}_s{seed}.csv")
                steps, calls, mean, std = log.rows[-1]
                rows.append([n, strategy, seed, mean, std, calls, steps, round(wall, 1)])
                print(f"{n}-link {strategy:<22} seed {seed}: {mean * 1e3:7.3f} mm "
                      f"(std {std * 1e3:.3f}) {calls} GN calls, {wall:.0f} s", flush=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        w.writerows(rows)


if __name__ == "__main__":
    main()
