"""Experiment engine: grids, CV runs, summaries, comparisons, audits.

Configuration files are flat ``key = value`` text with comma-separated
lists for grid axes.  Results stream into a CSV with a fixed header; the
writer flushes per record and a rerun skips records already present, so
interrupted grids resume.  Randomness for each (cell, seed, fold) is
derived from the cell's coordinate string, never its position, so adding
grid cells leaves existing cells' draws untouched.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    AttributeDomain,
    DataError,
    Dataset,
    DomainSpec,
    _parse_kv_lines,
    load_csv,
    parse_domain_spec,
    stratified_kfold,
)
from .ensemble import BoostedEnsemble, RandomForest, boost_fit, empirical_risk, rf_fit
from .losses import LossSpec, bayes_risk, sensitivity_bound
from .privacy import (
    BudgetAccountant,
    RandomSource,
    brute_force_sensitivity,
    derive_seed,
    replacement_neighbors,
)
from .tree import TreeConfig, TreePrivacy

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RESULT_COLUMNS",
    "AUDIT_COLUMNS",
    "run_experiment",
    "read_results",
    "summarize_cumulative",
    "CompareResult",
    "compare",
    "sensitivity_audit",
    "regularized_incomplete_beta",
    "students_t_test",
    "save_model",
    "load_model",
]


class ConfigError(ValueError):
    """Invalid experiment or model configuration."""


ALGORITHMS = ("boost", "rf_laplace", "rf_exponential")

RESULT_COLUMNS = (
    "algorithm",
    "T",
    "depth",
    "alpha",
    "epsilon",
    "beta_tree",
    "nvpriv",
    "M",
    "seed",
    "fold",
    "train_error",
    "test_error",
    "default_error",
    "leaves",
    "mean_depth",
    "spent_epsilon",
    "wall_time_s",
    "error",
)

AUDIT_COLUMNS = ("m", "alpha", "trial", "empirical_delta", "bound", "tight_case_delta")


def _parse_list(value: str, convert) -> tuple:
    items = [v.strip() for v in value.split(",") if v.strip()]
    if not items:
        raise ConfigError(f"empty list value {value!r}")
    return tuple(convert(v) for v in items)


def _alpha_value(token: str):
    if token == "oc":
        return "oc"
    try:
        x = float(token)
    except ValueError as exc:
        raise ConfigError(f"bad alpha {token!r}") from exc
    if not 0.0 <= x <= 1.0:
        raise ConfigError(f"alpha {x} outside [0, 1]")
    return x


def _epsilon_value(token: str):
    if token == "off":
        return "off"
    try:
        x = float(token)
    except ValueError as exc:
        raise ConfigError(f"bad epsilon {token!r}") from exc
    if not x > 0.0:
        raise ConfigError(f"epsilon {x} must be positive")
    return x


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated grid over algorithms and their parameters."""

    data: str
    domains: str
    algorithms: tuple = ("boost",)
    T: tuple = (10,)
    depth: tuple = (2,)
    alpha: tuple = ("oc",)
    epsilon: tuple = ("off",)
    beta_tree: tuple = (0.5,)
    M: tuple = (10.0,)
    nvpriv: tuple = (None,)
    k_folds: int = 10
    seeds: tuple = (0,)
    lc_alpha: float = 1.0

    @staticmethod
    def from_file(path: str) -> "ExperimentConfig":
        try:
            entries = _parse_kv_lines(path)
        except DataError as exc:
            raise ConfigError(str(exc)) from exc
        values: dict[str, str] = {}
        for lineno, key, value in entries:
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
        return ExperimentConfig.from_mapping(values, origin=path)

    @staticmethod
    def from_mapping(values: dict[str, str], origin: str = "<config>") -> "ExperimentConfig":
        known = {
            "data", "domains", "algorithm", "T", "depth", "alpha", "epsilon",
            "beta_tree", "M", "nvpriv", "k_folds", "seeds", "lc_alpha",
        }
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"{origin}: unknown keys {sorted(unknown)}")
        for required in ("data", "domains"):
            if required not in values:
                raise ConfigError(f"{origin}: missing key {required!r}")
        algorithms = _parse_list(values.get("algorithm", "boost"), str)
        for alg in algorithms:
            if alg not in ALGORITHMS:
                raise ConfigError(f"{origin}: unknown algorithm {alg!r}")
        try:
            cfg = ExperimentConfig(
                data=values["data"],
                domains=values["domains"],
                algorithms=algorithms,
                T=_parse_list(values.get("T", "10"), int),
                depth=_parse_list(values.get("depth", "2"), int),
                alpha=_parse_list(values.get("alpha", "oc"), _alpha_value),
                epsilon=_parse_list(values.get("epsilon", "off"), _epsilon_value),
                beta_tree=_parse_list(values.get("beta_tree", "0.5"), float),
                M=_parse_list(values.get("M", "10"), float),
                nvpriv=_parse_list(values["nvpriv"], int) if "nvpriv" in values else (None,),
                k_folds=int(values.get("k_folds", "10")),
                seeds=_parse_list(values.get("seeds", "0"), int),
                lc_alpha=float(values.get("lc_alpha", "1.0")),
            )
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{origin}: {exc}") from exc
        if cfg.k_folds < 2:
            raise ConfigError(f"{origin}: k_folds must be >= 2")
        if any(t < 1 for t in cfg.T) or any(d < 1 for d in cfg.depth):
            raise ConfigError(f"{origin}: T and depth must be >= 1")
        if any(not 0.0 < b < 1.0 for b in cfg.beta_tree):
            raise ConfigError(f"{origin}: beta_tree must lie in (0, 1)")
        return cfg

    def cells(self) -> list[dict]:
        """The deduplicated grid: one dict of coordinates per cell.

        Parameters that do not apply to an algorithm (alpha and beta_tree
        for forests) are blanked, and the resulting duplicates dropped.
        """
        seen = set()
        out = []
        for alg, T, depth, alpha, eps, beta, nv, M in itertools.product(
            self.algorithms, self.T, self.depth, self.alpha, self.epsilon,
            self.beta_tree, self.nvpriv, self.M,
        ):
            cell = {
                "algorithm": alg,
                "T": T,
                "depth": depth,
                "alpha": alpha if alg == "boost" else "",
                "epsilon": eps,
                "beta_tree": beta if alg == "boost" else "",
                "nvpriv": nv if nv is not None else "",
                "M": M if alg == "boost" else "",
            }
            if alg != "boost" and eps == "off":
                continue  # the forest baselines are DP-only
            key = cell_key(cell)
            if key not in seen:
                seen.add(key)
                out.append(cell)
        return out


def cell_key(cell: dict) -> str:
    return "|".join(f"{k}={cell[k]}" for k in sorted(cell))


def _load_for_nvpriv(config: ExperimentConfig, nvpriv) -> Dataset:
    spec = parse_domain_spec(config.domains)
    if nvpriv not in ("", None):
        spec = DomainSpec(
            tuple(
                AttributeDomain(dom.name, dom.lo, dom.hi, int(nvpriv))
                for dom in spec.attributes
            ),
            spec.label_map,
            spec.label_column,
        )
    return load_csv(config.data, spec.label_column, spec)


def _fit_cell(cell: dict, train: Dataset, T: int, lc_alpha: float, run_seed: int):
    """Train one model; returns (model, spent_epsilon)."""
    rng = RandomSource(run_seed)
    eps = cell["epsilon"]
    if cell["algorithm"] == "boost":
        if eps == "off":
            tree_config = TreeConfig(depth=cell["depth"], alpha=cell["alpha"])
            model = boost_fit(
                train, T, tree_config, lc_alpha=lc_alpha,
                output_bound=float(cell["M"]), rng=rng,
            )
            return model, 0.0
        privacy = TreePrivacy(
            epsilon=float(eps),
            beta_tree=float(cell["beta_tree"]),
            output_bound=float(cell["M"]),
            ensemble_size=T,
        )
        tree_config = TreeConfig(depth=cell["depth"], alpha=cell["alpha"], privacy=privacy)
        accountant = BudgetAccountant(float(eps))
        model = boost_fit(
            train, T, tree_config, lc_alpha=lc_alpha, accountant=accountant, rng=rng
        )
        return model, accountant.total_spent
    mechanism = "laplace" if cell["algorithm"] == "rf_laplace" else "exponential"
    accountant = BudgetAccountant(float(eps))
    model = rf_fit(train, T, cell["depth"], float(eps), mechanism, accountant, rng)
    return model, accountant.total_spent


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _existing_keys(path: str) -> set[tuple]:
    if not os.path.exists(path):
        return set()
    keys = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return set()
        if tuple(reader.fieldnames) != RESULT_COLUMNS:
            raise ConfigError(f"{path}: unexpected results header {reader.fieldnames}")
        for row in reader:
            keys.add(_record_key(row))
    return keys


def _record_key(row: dict) -> tuple:
    return tuple(row[k] for k in ("algorithm", "T", "depth", "alpha", "epsilon",
                                  "beta_tree", "nvpriv", "M", "seed", "fold"))


def run_experiment(config: ExperimentConfig, out_path: str, jobs: int = 1) -> int:
    """Run every (cell, seed, fold) and append records to ``out_path``.

    Deterministic given the config's seeds; completed records are skipped
    on rerun.  Per-record failures land in the ``error`` column and the
    run continues.  Returns the number of records written.
    """
    done = _existing_keys(out_path)
    cells = config.cells()
    write_header = not os.path.exists(out_path) or os.path.getsize(out_path) == 0

    work = []
    for cell in cells:
        dataset = None  # lazily loaded per cell (nvpriv may re-quantize)
        for seed in config.seeds:
            for fold in range(config.k_folds):
                row_id = tuple(
                    _format(v) for v in (
                        cell["algorithm"], cell["T"], cell["depth"], cell["alpha"],
                        cell["epsilon"], cell["beta_tree"], cell["nvpriv"], cell["M"],
                        seed, fold,
                    )
                )
                if row_id in done:
                    continue
                work.append((cell, seed, fold))

    datasets: dict = {}

    def get_dataset(nv) -> Dataset:
        if nv not in datasets:
            datasets[nv] = _load_for_nvpriv(config, nv)
        return datasets[nv]

    def run_one(cell: dict, seed: int, fold: int) -> dict:
        record = dict.fromkeys(RESULT_COLUMNS, "")
        record.update(
            algorithm=cell["algorithm"], T=cell["T"], depth=cell["depth"],
            alpha=cell["alpha"], epsilon=cell["epsilon"], beta_tree=cell["beta_tree"],
            nvpriv=cell["nvpriv"], M=cell["M"], seed=seed, fold=fold, error="",
        )
        start = time.perf_counter()
        try:
            dataset = get_dataset(cell["nvpriv"])
            fold_rng = RandomSource(derive_seed(seed, "folds", config.k_folds))
            folds = stratified_kfold(dataset, config.k_folds, fold_rng)
            train_idx, test_idx = folds[fold]
            train, test = dataset.subset(train_idx), dataset.subset(test_idx)
            run_seed = derive_seed(seed, cell_key(cell), fold)
            model, spent = _fit_cell(cell, train, cell["T"], config.lc_alpha, run_seed)
            pos_frac = float(np.mean(test.y == 1))
            record.update(
                train_error=empirical_risk(model, train),
                test_error=empirical_risk(model, test),
                default_error=min(pos_frac, 1.0 - pos_frac),
                leaves=model.n_leaves,
                mean_depth=model.mean_leaf_depth,
                spent_epsilon=spent,
            )
        except Exception as exc:  # recorded, run continues
            record["error"] = f"{type(exc).__name__}: {exc}"
        record["wall_time_s"] = time.perf_counter() - start
        return record

    written = 0
    with open(out_path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if write_header:
            writer.writerow(RESULT_COLUMNS)
            fh.flush()
        if jobs > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(run_one, *item) for item in work]
                records = [f.result() for f in futures]  # submission order
        else:
            records = (run_one(*item) for item in work)
        for record in records:
            writer.writerow([_format(record[c]) for c in RESULT_COLUMNS])
            fh.flush()
            written += 1
    return written


def read_results(path: str) -> list[dict]:
    """Load a results CSV, failing loudly on header drift."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RESULT_COLUMNS:
            raise ConfigError(f"{path}: unexpected results header {reader.fieldnames}")
        return list(reader)


def _valid_rows(rows: list[dict]) -> list[dict]:
    return [r for r in rows if not r.get("error") and r.get("test_error") not in ("", None)]


def summarize_cumulative(rows: list[dict], group_by: tuple[str, ...]) -> list[dict]:
    """Cumulative test-error curves per group.

    For each group: the sorted distinct test errors with the percentage of
    the group's runs at or below each, plus the group's mean default-class
    error as a reference.
    """
    if not rows:
        raise ConfigError("no results to summarize")
    valid = _valid_rows(rows)
    if not valid:
        warnings.warn("all rows carry errors; nothing to summarize")
        return []
    groups: dict[tuple, list[dict]] = {}
    for row in valid:
        groups.setdefault(tuple(row[k] for k in group_by), []).append(row)
    out = []
    for key in sorted(groups):
        members = groups[key]
        errors = sorted(float(r["test_error"]) for r in members)
        default_mean = float(np.mean([float(r["default_error"]) for r in members]))
        n = len(errors)
        for value in sorted(set(errors)):
            below = sum(1 for e in errors if e <= value)
            record = dict(zip(group_by, key))
            record.update(
                test_error=value,
                cumulative_pct=100.0 * below / n,
                default_error_mean=default_mean,
            )
            out.append(record)
    return out


# --- Student's t machinery (no stats dependency) --------------------------


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta (Lentz's method).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 200):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not (a > 0.0 and b > 0.0):
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def students_t_test(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided unpaired pooled-variance t test: (statistic, p value)."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("both samples need at least two observations")
    na, nb = a.size, b.size
    df = na + nb - 2
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / df
    se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    diff = a.mean() - b.mean()
    if se == 0.0:
        return (0.0, 1.0) if diff == 0.0 else (math.copysign(math.inf, diff), 0.0)
    t = diff / se
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return t, p


@dataclass
class CompareResult:
    cells_total: int
    cells_significant: int
    a_wins: int
    b_wins: int
    a_win_percent: float
    per_cell: list[dict] = field(default_factory=list)


def compare(
    rows_a: list[dict],
    rows_b: list[dict],
    p_threshold: float = 0.01,
    cell_columns: tuple[str, ...] = ("epsilon", "depth", "seed"),
) -> CompareResult:
    """Cell-wise significance comparison of two result sets.

    Rows are grouped by ``cell_columns`` (which must yield the same cell
    set on both sides); within a cell the fold test errors feed a
    two-sided pooled t test.  Wins are counted among significant cells
    only, by lower mean error.
    """
    def collect(rows):
        groups: dict[tuple, list[float]] = {}
        for row in _valid_rows(rows):
            groups.setdefault(tuple(row[k] for k in cell_columns), []).append(
                float(row["test_error"])
            )
        return groups

    groups_a, groups_b = collect(rows_a), collect(rows_b)
    if not groups_a or set(groups_a) != set(groups_b):
        only_a = sorted(set(groups_a) - set(groups_b))
        only_b = sorted(set(groups_b) - set(groups_a))
        raise ConfigError(
            f"result grids do not match on {cell_columns}: "
            f"only in a: {only_a[:5]}, only in b: {only_b[:5]}"
        )
    significant = a_wins = b_wins = 0
    per_cell = []
    for key in sorted(groups_a):
        t, p = students_t_test(groups_a[key], groups_b[key])
        is_significant = p < p_threshold
        winner = ""
        if is_significant:
            significant += 1
            if float(np.mean(groups_a[key])) < float(np.mean(groups_b[key])):
                a_wins += 1
                winner = "a"
            else:
                b_wins += 1
                winner = "b"
        per_cell.append(dict(zip(cell_columns, key), t=t, p=p, winner=winner))
    pct = 100.0 * a_wins / significant if significant else 0.0
    return CompareResult(len(groups_a), significant, a_wins, b_wins, pct, per_cell)


# --- sensitivity audit -----------------------------------------------------


def _leaf_criterion(alpha: float, threshold_bin: int):
    """Per-leaf risk f(S) = w(leaf) * bayes_risk(w1 / w) on a public leaf.

    The leaf is the region "attribute 0 bin <= threshold_bin", so a
    replacement can move an example in or out of it.
    """
    spec = LossSpec.malpha(alpha)

    def criterion(dataset: Dataset) -> float:
        member = dataset.X[:, 0] <= threshold_bin
        w = float(dataset.weights[member].sum())
        if w <= 0.0:
            return 0.0
        w1 = float(dataset.weights[member & (dataset.y == 1)].sum())
        return w * float(bayes_risk(spec, w1 / w))

    return criterion


def tight_case_delta(m: int, alpha: float) -> float:
    """Criterion change for the lone-positive label flip on unit weights.

    All ``m`` examples sit in the audited leaf; exactly one is positive and
    the neighbor flips it.  Evaluated from the two datasets, not from a
    formula.
    """
    domains = [AttributeDomain("x0", 0.0, 3.0, 4)]
    X = np.zeros((m, 1), dtype=np.int64)
    y = np.full(m, -1)
    y[0] = 1
    base = Dataset(X, y, domains)
    flipped = Dataset(X, np.full(m, -1), domains)
    criterion = _leaf_criterion(alpha, threshold_bin=2)
    return abs(criterion(flipped) - criterion(base))


def sensitivity_audit(
    m_values=(2, 3, 4, 5, 6, 7, 8),
    alphas=(0.0, 0.3, 1.0),
    trials: int = 10,
    seed: int = 0,
    nvpriv: int = 4,
) -> list[dict]:
    """Brute-force the leaf-criterion sensitivity against its closed bound.

    One row per (m, alpha, trial): the exact maximum over all replacement
    neighbors of a random dataset, the closed-form bound, and the
    lone-positive-flip value for that (m, alpha).
    """
    weight_grid = (0.25, 0.5, 1.0)
    rows = []
    for m in m_values:
        for alpha in alphas:
            tight = tight_case_delta(m, alpha)
            bound = sensitivity_bound(LossSpec.malpha(alpha), m)
            for trial in range(trials):
                rng = RandomSource(derive_seed(seed, "audit", m, repr(alpha), trial))
                domains = [AttributeDomain("x0", 0.0, float(nvpriv - 1), nvpriv)]
                X = np.array([[rng.randint(nvpriv)] for _ in range(m)], dtype=np.int64)
                y = np.array([1 if rng.uniform() < 0.5 else -1 for _ in range(m)])
                w = np.array([weight_grid[rng.randint(len(weight_grid))] for _ in range(m)])
                base = Dataset(X, y, domains, w)
                criterion = _leaf_criterion(alpha, threshold_bin=rng.randint(nvpriv - 1))
                delta = brute_force_sensitivity(
                    criterion, base, replacement_neighbors(base, weight_grid=weight_grid)
                )
                rows.append(
                    {
                        "m": m,
                        "alpha": alpha,
                        "trial": trial,
                        "empirical_delta": delta,
                        "bound": bound,
                        "tight_case_delta": tight,
                    }
                )
    return rows


def write_csv(path: str, rows: list[dict], columns: tuple[str, ...]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(c, "")) for c in columns])


# --- model persistence -----------------------------------------------------

MODEL_FORMAT = "dpboost-model"
MODEL_VERSION = 1


def save_model(path: str, model, spec: DomainSpec) -> None:
    """Serialize a fitted model plus the public domains it expects."""
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "model": model.to_dict(),
        "domains": [
            {"name": d.name, "lo": d.lo, "hi": d.hi, "nvpriv": d.nvpriv}
            for d in spec.attributes
        ],
        "label_map": spec.label_map,
        "label_column": spec.label_column,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path: str):
    """Inverse of :func:`save_model`; returns (model, DomainSpec)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc
    if payload.get("format") != MODEL_FORMAT or payload.get("version") != MODEL_VERSION:
        raise ConfigError(f"{path}: not a version-{MODEL_VERSION} {MODEL_FORMAT} file")
    spec = DomainSpec(
        tuple(
            AttributeDomain(d["name"], float(d["lo"]), float(d["hi"]), int(d["nvpriv"]))
            for d in payload["domains"]
        ),
        {k: int(v) for k, v in payload["label_map"].items()},
        payload.get("label_column"),
    )
    data = payload["model"]
    model = (
        BoostedEnsemble.from_dict(data) if data["kind"] == "boost" else RandomForest.from_dict(data)
    )
    return model, spec
