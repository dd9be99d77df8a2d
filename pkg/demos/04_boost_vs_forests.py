"""Boosted trees against DP random forests across privacy regimes.

Random forests are the standard baseline under differential privacy:
their structure is picked at random, so the whole budget goes to the leaf
labels.  This script runs a small cross-validated grid at several epsilons
and compares per-seed with a pooled two-sided t test, the same machinery
the `compare` CLI subcommand uses.  At tight budgets the boosted ensembles
pull far ahead; at generous budgets the forests catch up.
"""

import csv
import tempfile
from pathlib import Path

import numpy as np

from dpboost.dataset import make_blocks_dataset
from dpboost.harness import ExperimentConfig, compare, read_results, run_experiment

workdir = Path(tempfile.mkdtemp(prefix="dpboost-demo-"))
dataset = make_blocks_dataset(m=400, n=4, seed=7)
data_path = workdir / "blocks.csv"
with open(data_path, "w", newline="") as fh:
    writer = csv.writer(fh)
    writer.writerow([f"x{j}" for j in range(4)] + ["y"])
    for i in range(dataset.n_examples):
        writer.writerow([float(v) for v in dataset.X[i]] + [int(dataset.y[i])])
domains_path = workdir / "blocks.domains"
domains_path.write_text(
    "label_column = y\nlabel_map = -1:-1, 1:+1\n"
    + "".join(f"attribute = x{j} 0.0 9.0 10\n" for j in range(4))
)

EPSILONS = ("0.01", "0.1", "1.0")
SEEDS = ",".join(str(s) for s in range(5))


def run(name, **lines):
    config = workdir / f"{name}.config"
    base = {"data": str(data_path), "domains": str(domains_path),
            "k_folds": "10", "seeds": SEEDS, "epsilon": ",".join(EPSILONS)}
    base.update(lines)
    config.write_text("".join(f"{k} = {v}\n" for k, v in base.items()))
    out = workdir / f"{name}.csv"
    run_experiment(ExperimentConfig.from_file(str(config)), str(out))
    return read_results(str(out))


print("running boost (objective calibration, T = 20, depth 2) ...")
boost_rows = run("boost", algorithm="boost", T="20", depth="2", alpha="oc",
                 beta_tree="0.5", M="10")
print("running rf_laplace and rf_exponential (T = 21, depth 2) ...")
rf_rows = {
    name: run(name, algorithm=name, T="21", depth="2")
    for name in ("rf_laplace", "rf_exponential")
}

print()
print(f"{'epsilon':>8} {'boost':>8} {'rf_laplace':>11} {'rf_exponential':>15}")
for eps in EPSILONS:
    def mean_err(rows):
        vals = [float(r["test_error"]) for r in rows if r["epsilon"] == eps and not r["error"]]
        return float(np.mean(vals))

    print(f"{eps:>8} {mean_err(boost_rows):>8.3f} {mean_err(rf_rows['rf_laplace']):>11.3f} "
          f"{mean_err(rf_rows['rf_exponential']):>15.3f}")

print()
print("significance per (epsilon, seed) cell, p < 0.01 over the 10 folds:")
for name, rows in rf_rows.items():
    result = compare(boost_rows, rows, p_threshold=0.01,
                     cell_columns=("epsilon", "depth", "seed"))
    print(f"  boost vs {name}: {result.a_wins} wins / {result.b_wins} losses on "
          f"{result.cells_significant} significant of {result.cells_total} cells "
          f"({result.a_win_percent:.0f}% for boost)")

print(f"\nresult CSVs left in {workdir} for the summarize/compare CLI commands.")
