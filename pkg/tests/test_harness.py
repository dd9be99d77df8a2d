"""Experiment engine: configs, grid runs, curves, significance tests, audit.

The in-repo incomplete beta and t test are cross-checked against scipy,
which serves as the independent oracle and never appears in the package
itself.
"""

import csv
import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from dpboost.dataset import make_blocks_dataset
from dpboost.harness import (
    AUDIT_COLUMNS,
    CompareResult,
    ConfigError,
    ExperimentConfig,
    RESULT_COLUMNS,
    compare,
    load_model,
    read_results,
    regularized_incomplete_beta,
    run_experiment,
    save_model,
    sensitivity_audit,
    students_t_test,
    summarize_cumulative,
    tight_case_delta,
    write_csv,
)
from dpboost.losses import LossSpec, bayes_risk
from dpboost.dataset import parse_domain_spec


def _write_blocks_csv(tmp_path, m=60, n=3, seed=2):
    ds = make_blocks_dataset(m, n, seed=seed)
    data = tmp_path / "blocks.csv"
    with open(data, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(n)] + ["y"])
        for i in range(m):
            writer.writerow([float(v) for v in ds.X[i]] + [int(ds.y[i])])
    domains = tmp_path / "blocks.domains"
    lines = ["label_column = y", "label_map = -1:-1, 1:+1"]
    lines += [f"attribute = x{j} 0.0 9.0 10" for j in range(n)]
    domains.write_text("\n".join(lines) + "\n")
    return str(data), str(domains)


@pytest.fixture
def blocks_files(tmp_path):
    return _write_blocks_csv(tmp_path)


def _config_file(tmp_path, data, domains, **overrides):
    lines = {
        "data": data,
        "domains": domains,
        "algorithm": "boost",
        "T": "2",
        "depth": "1",
        "alpha": "1.0",
        "epsilon": "off",
        "k_folds": "3",
        "seeds": "0",
    }
    lines.update(overrides)
    path = tmp_path / "grid.config"
    path.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))
    return str(path)


class TestConfig:
    def test_parse_and_grid(self, tmp_path, blocks_files):
        data, domains = blocks_files
        path = _config_file(
            tmp_path, data, domains,
            algorithm="boost,rf_laplace", T="2,5", epsilon="off,0.5", alpha="0.1,oc",
        )
        cfg = ExperimentConfig.from_file(path)
        cells = cfg.cells()
        # boost: 2T x 2eps x 2alpha = 8; rf: 2T x 1eps (off dropped) = 2
        assert len([c for c in cells if c["algorithm"] == "boost"]) == 8
        assert len([c for c in cells if c["algorithm"] == "rf_laplace"]) == 2

    def test_unknown_key(self, tmp_path, blocks_files):
        data, domains = blocks_files
        path = _config_file(tmp_path, data, domains, bogus="1")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(path)

    def test_missing_required(self, tmp_path):
        path = tmp_path / "bad.config"
        path.write_text("T = 5\ndomains = d\n")
        with pytest.raises(ConfigError, match="data"):
            ExperimentConfig.from_file(path)

    def test_invalid_values(self, tmp_path, blocks_files):
        data, domains = blocks_files
        for overrides in ({"alpha": "2.0"}, {"epsilon": "-1"}, {"beta_tree": "1.5"},
                          {"algorithm": "svm"}, {"k_folds": "1"}):
            path = _config_file(tmp_path, data, domains, **overrides)
            with pytest.raises(ConfigError):
                ExperimentConfig.from_file(path)


class TestRunExperiment:
    def test_record_count_and_schema(self, tmp_path, blocks_files):
        data, domains = blocks_files
        cfg = ExperimentConfig.from_file(_config_file(tmp_path, data, domains, k_folds="2"))
        out = str(tmp_path / "results.csv")
        written = run_experiment(cfg, out)
        assert written == 2  # one cell x one seed x two folds
        rows = read_results(out)
        assert len(rows) == 2
        assert tuple(rows[0].keys()) == RESULT_COLUMNS
        for row in rows:
            assert row["error"] == ""
            assert 0.0 <= float(row["test_error"]) <= 1.0
            assert row["spent_epsilon"] == "0.0"

    def test_private_cells_record_spend(self, tmp_path, blocks_files):
        data, domains = blocks_files
        cfg = ExperimentConfig.from_file(
            _config_file(tmp_path, data, domains, epsilon="0.5", algorithm="boost,rf_exponential")
        )
        out = str(tmp_path / "results.csv")
        run_experiment(cfg, out)
        for row in read_results(out):
            assert float(row["spent_epsilon"]) == pytest.approx(0.5, abs=1e-12)

    def test_deterministic_and_resumable(self, tmp_path, blocks_files):
        data, domains = blocks_files
        cfg = ExperimentConfig.from_file(
            _config_file(tmp_path, data, domains, epsilon="0.5", seeds="0,1")
        )
        out_a = str(tmp_path / "a.csv")
        out_b = str(tmp_path / "b.csv")
        run_experiment(cfg, out_a)
        run_experiment(cfg, out_b)

        def numeric_columns(path):
            rows = read_results(path)
            skip = {"wall_time_s"}  # wall time is the one legitimately noisy column
            return [[row[c] for c in RESULT_COLUMNS if c not in skip] for row in rows]

        assert numeric_columns(out_a) == numeric_columns(out_b)
        # rerun over an existing file adds nothing
        assert run_experiment(cfg, out_a) == 0
        assert numeric_columns(out_a) == numeric_columns(out_b)

    def test_adding_cells_preserves_existing_randomness(self, tmp_path, blocks_files):
        data, domains = blocks_files
        small = ExperimentConfig.from_file(
            _config_file(tmp_path, data, domains, epsilon="0.5")
        )
        big = ExperimentConfig.from_file(
            _config_file(tmp_path, data, domains, epsilon="0.5,1.0", T="2,3")
        )
        out_small = str(tmp_path / "small.csv")
        out_big = str(tmp_path / "big.csv")
        run_experiment(small, out_small)
        run_experiment(big, out_big)
        key_cols = ("algorithm", "T", "depth", "alpha", "epsilon", "fold")
        small_rows = {
            tuple(r[c] for c in key_cols): r["test_error"] for r in read_results(out_small)
        }
        big_rows = {
            tuple(r[c] for c in key_cols): r["test_error"] for r in read_results(out_big)
        }
        for key, value in small_rows.items():
            assert big_rows[key] == value

    def test_jobs_parallel_same_output(self, tmp_path, blocks_files):
        data, domains = blocks_files
        cfg = ExperimentConfig.from_file(
            _config_file(tmp_path, data, domains, T="2,3", epsilon="0.5")
        )
        out_serial = str(tmp_path / "serial.csv")
        out_parallel = str(tmp_path / "parallel.csv")
        run_experiment(cfg, out_serial, jobs=1)
        run_experiment(cfg, out_parallel, jobs=3)
        strip = lambda rows: [
            [r[c] for c in RESULT_COLUMNS if c != "wall_time_s"] for r in rows
        ]
        assert strip(read_results(out_serial)) == strip(read_results(out_parallel))

    def test_per_cell_error_recorded_run_continues(self, tmp_path, blocks_files):
        data, domains = blocks_files
        # k_folds = 25 exceeds the smaller class in 2 of 3 folds' training data
        cfg = ExperimentConfig.from_file(
            _config_file(tmp_path, data, domains, k_folds="40")
        )
        out = str(tmp_path / "res.csv")
        run_experiment(cfg, out)
        rows = read_results(out)
        assert len(rows) == 40
        assert all("class" in r["error"] for r in rows)

    def test_header_drift_breaks_loudly(self, tmp_path):
        bad = tmp_path / "drift.csv"
        bad.write_text("algorithm,T\nboost,2\n")
        with pytest.raises(ConfigError):
            read_results(str(bad))

    def test_nvpriv_grid_requantizes(self, tmp_path, blocks_files):
        data, domains = blocks_files
        cfg = ExperimentConfig.from_file(
            _config_file(tmp_path, data, domains, nvpriv="5,10", k_folds="2")
        )
        out = str(tmp_path / "res.csv")
        run_experiment(cfg, out)
        rows = read_results(out)
        assert sorted({r["nvpriv"] for r in rows}) == ["10", "5"]
        assert all(r["error"] == "" for r in rows)


class TestSummarize:
    def _rows(self, errors, default=0.5):
        return [
            {
                "algorithm": "boost", "alpha": "oc", "epsilon": "off",
                "test_error": repr(e), "default_error": repr(default), "error": "",
            }
            for e in errors
        ]

    def test_counting_example(self):
        rows = self._rows([0.1, 0.1, 0.2, 0.4])
        curve = summarize_cumulative(rows, ("algorithm",))
        points = [(r["test_error"], r["cumulative_pct"]) for r in curve]
        assert points == [(0.1, 50.0), (0.2, 75.0), (0.4, 100.0)]

    def test_single_run(self):
        curve = summarize_cumulative(self._rows([0.25]), ("algorithm",))
        assert [(r["test_error"], r["cumulative_pct"]) for r in curve] == [(0.25, 100.0)]

    def test_default_class_reference(self):
        curve = summarize_cumulative(self._rows([0.1, 0.3], default=0.4), ("algorithm",))
        assert all(r["default_error_mean"] == pytest.approx(0.4) for r in curve)

    def test_empty_input_errors(self):
        with pytest.raises(ConfigError):
            summarize_cumulative([], ("algorithm",))

    def test_all_failed_rows_warns(self):
        rows = self._rows([0.1])
        rows[0]["error"] = "boom"
        with pytest.warns(UserWarning):
            assert summarize_cumulative(rows, ("algorithm",)) == []


class TestStudentsT:
    def test_spot_value(self):
        t, p = students_t_test([0.1, 0.2, 0.3], [0.4, 0.5, 0.6])
        assert t == pytest.approx(-3.674, abs=1e-3)
        assert p == pytest.approx(0.0214, abs=5e-4)

    def test_matches_scipy(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            a = rng.normal(size=rng.integers(2, 12))
            b = rng.normal(loc=rng.normal(), size=rng.integers(2, 12))
            t, p = students_t_test(a, b)
            ref = scipy.stats.ttest_ind(a, b, equal_var=True)
            assert t == pytest.approx(ref.statistic, rel=1e-10)
            assert p == pytest.approx(ref.pvalue, rel=1e-8)

    def test_beta_matches_scipy(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            a = float(rng.uniform(0.1, 20.0))
            b = float(rng.uniform(0.1, 20.0))
            x = float(rng.uniform(0.0, 1.0))
            assert regularized_incomplete_beta(a, b, x) == pytest.approx(
                float(scipy.special.betainc(a, b, x)), abs=1e-12, rel=1e-10
            )

    def test_degenerate_zero_variance(self):
        t, p = students_t_test([0.0, 0.0], [0.5, 0.5])
        assert math.isinf(t) and p == 0.0
        t, p = students_t_test([0.5, 0.5], [0.5, 0.5])
        assert t == 0.0 and p == 1.0


class TestCompare:
    def _rows(self, errors_by_cell, extra=()):
        rows = []
        for (eps, depth, seed), errors in errors_by_cell.items():
            for fold, e in enumerate(errors):
                rows.append({
                    "epsilon": eps, "depth": depth, "seed": seed, "fold": str(fold),
                    "test_error": repr(e), "default_error": "0.5", "error": "",
                })
        return rows

    def test_identical_sets_no_significance(self):
        cells = {("1.0", "2", "0"): [0.1, 0.2, 0.3, 0.25, 0.15]}
        result = compare(self._rows(cells), self._rows(cells))
        assert isinstance(result, CompareResult)
        assert result.cells_significant == 0
        assert result.a_win_percent == 0.0

    def test_degenerate_separation(self):
        a = {("1.0", "2", "0"): [0.0 + 1e-6 * i for i in range(10)]}
        b = {("1.0", "2", "0"): [0.5 + 1e-6 * i for i in range(10)]}
        result = compare(self._rows(a), self._rows(b))
        assert result.cells_significant == 1
        assert result.a_wins == 1
        assert result.a_win_percent == 100.0

    def test_unmatched_grid_errors(self):
        a = {("1.0", "2", "0"): [0.1, 0.2, 0.3]}
        b = {("2.0", "2", "0"): [0.1, 0.2, 0.3]}
        with pytest.raises(ConfigError, match="do not match"):
            compare(self._rows(a), self._rows(b))


class TestSensitivityAudit:
    def test_rows_and_pass_criteria(self):
        rows = sensitivity_audit(m_values=(2, 4, 6), alphas=(0.0, 1.0), trials=3, seed=1)
        assert len(rows) == 3 * 2 * 3
        for row in rows:
            assert row["empirical_delta"] <= row["bound"] + 1e-9
            m, alpha = row["m"], row["alpha"]
            expected_tight = m * float(bayes_risk(LossSpec.malpha(alpha), 1.0 / m))
            assert row["tight_case_delta"] == pytest.approx(expected_tight, abs=1e-9)

    def test_alpha_zero_bound_is_three(self):
        rows = sensitivity_audit(m_values=(3, 7), alphas=(0.0,), trials=2, seed=0)
        assert all(row["bound"] == 3.0 for row in rows)

    def test_tight_case_value(self):
        assert tight_case_delta(4, 1.0) == pytest.approx(2.0 * math.sqrt(3.0), abs=1e-12)

    def test_csv_write(self, tmp_path):
        rows = sensitivity_audit(m_values=(2,), alphas=(1.0,), trials=1, seed=0)
        out = tmp_path / "audit.csv"
        write_csv(str(out), rows, AUDIT_COLUMNS)
        with open(out) as fh:
            header = fh.readline().strip().split(",")
        assert tuple(header) == AUDIT_COLUMNS


class TestModelIO:
    def test_round_trip_boost(self, tmp_path, blocks_files):
        data, domains = blocks_files
        from dpboost.dataset import load_csv
        from dpboost.ensemble import boost_fit, predict
        from dpboost.tree import TreeConfig

        spec = parse_domain_spec(domains)
        ds = load_csv(data, spec.label_column, spec)
        model = boost_fit(ds, 3, TreeConfig(depth=2, alpha=1.0), output_bound=10.0)
        path = str(tmp_path / "model.json")
        save_model(path, model, spec)
        loaded, loaded_spec = load_model(path)
        assert loaded_spec == spec
        m0, l0 = predict(model, ds.X)
        m1, l1 = predict(loaded, ds.X)
        assert np.array_equal(m0, m1) and np.array_equal(l0, l1)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ConfigError):
            load_model(str(path))
