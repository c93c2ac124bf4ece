"""Experiment orchestration: sweeps over the cost weight, metrics, and reports.

A single JSON config names the dataset, predictor, policy, and alpha list;
the runner rolls the policy out on every test instance per alpha, scores
the episodes, and emits CSV/JSON reports plus plot-ready data files.
Results are deterministic for a fixed seed regardless of worker count.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    CLASSIFICATION,
    CubeConfig,
    Dataset,
    DecisionEnvConfig,
    apply_standardization,
    generate_cube,
    generate_decision_env,
    generate_guide,
    load_csv,
    split,
    standardize,
)
from .decisions import (
    BanditSchema,
    DecisionLookaheadPolicy,
    PartialPolicyTable,
    QConfig,
    acquire_contexts,
    agreement,
    decisions_for_subsets,
    estimate_value,
    feature_selection_baseline,
    fit_q,
    full_policy,
    load_bandit_csv,
    optimal_rate,
    standardize_contexts,
)
from .errors import ConfigError
from .neighbors import NeighborIndex, build_index
from .policies import (
    AcquisitionEnvironment,
    CostModel,
    FixedOrderPolicy,
    NeighborLookaheadPolicy,
    RandomPolicy,
    SubsetSearchConfig,
    rollout,
)
from .predictors import (
    LOSS_KINDS,
    MaskedLinearConfig,
    cube_ground_truth,
    knn_predictor,
    load_predictor,
    train_masked_linear,
)

MAIN_POLICY_NAME = "lookahead"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """One prediction-AFA experiment: dataset, predictor, policy, alpha sweep."""

    dataset: dict
    predictor: dict
    policy: dict
    alphas: list[float]
    loss: str = "cross-entropy"
    seed: int = 0
    baselines: list[dict] = field(default_factory=list)
    test_limit: int | None = None
    workers: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if not self.alphas:
            raise ConfigError("alphas must be a nonempty list")
        alphas = [float(a) for a in self.alphas]
        if any(a < 0 for a in alphas):
            raise ConfigError("alphas must be nonnegative")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ConfigError("alphas must be strictly increasing")
        self.alphas = alphas
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        for key in ("kind",):
            for name, spec in (("dataset", self.dataset), ("predictor", self.predictor)):
                if key not in spec:
                    raise ConfigError(f"{name} spec needs a {key!r} entry")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            blob = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls(**blob)
        except TypeError as exc:
            raise ConfigError(f"bad config {path}: {exc}") from exc


@dataclass
class ReportRow:
    policy: str
    alpha: float
    metrics: dict
    histogram: list | None = None
    wall_clock: float = 0.0


@dataclass
class Report:
    rows: list[ReportRow]
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_dataset(spec: dict) -> Dataset:
    spec = dict(spec)
    kind = spec.pop("kind")
    spec.pop("split", None)
    spec.pop("split_seed", None)
    if kind == "cube":
        return generate_cube(CubeConfig(**spec))
    if kind == "guide":
        return generate_guide(**spec)
    if kind == "csv":
        return load_csv(spec["path"], spec["label_column"],
                        spec.get("task_kind", CLASSIFICATION))
    raise ConfigError(f"unknown dataset kind {kind!r}")


def prepare_splits(spec: dict, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Generate, split on raw values, then standardize with train statistics."""
    dataset = build_dataset(spec)
    fractions = spec.get("split", (0.8, 0.1, 0.1))
    split_seed = spec.get("split_seed", seed)
    train, val, test = split(dataset, fractions, split_seed)
    train_std, params = standardize(train)
    return train_std, apply_standardization(val, params), apply_standardization(test, params)


def build_predictor(spec: dict, train: Dataset, dataset_spec: dict | None = None):
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "knn":
        return knn_predictor(train, **spec)
    if kind == "masked-linear":
        return train_masked_linear(train, MaskedLinearConfig(**spec))
    if kind == "cube-posterior":
        sigma = spec.get("sigma", (dataset_spec or {}).get("sigma", 0.3))
        return cube_ground_truth(sigma, standardization=train.standardization)
    if kind == "file":
        return load_predictor(spec["path"])
    raise ConfigError(f"unknown predictor kind {kind!r}")


def build_policy(spec: dict, alpha: float, index: NeighborIndex, predictor,
                 cost_model: CostModel, loss_kind: str):
    spec = dict(spec)
    kind = spec.pop("kind", MAIN_POLICY_NAME)
    if kind == MAIN_POLICY_NAME:
        config = SubsetSearchConfig(alpha=alpha, **spec)
        return NeighborLookaheadPolicy(index, predictor, cost_model, config, loss_kind)
    if kind == "random":
        return RandomPolicy(spec["budget"], index.n_features)
    if kind == "fixed-order":
        return FixedOrderPolicy(spec["order"])
    if kind == "student":
        from .imitation import load_student

        return load_student(spec["path"])
    raise ConfigError(f"unknown policy kind {kind!r}")


def worker_count(requested: int) -> int:
    cap = os.environ.get("AFA_THREADS")
    if cap is not None:
        try:
            return max(1, min(int(requested), int(cap)))
        except ValueError:
            raise ConfigError(f"AFA_THREADS must be an integer, got {cap!r}") from None
    return max(1, int(requested))


# ---------------------------------------------------------------------------
# Roll-out plumbing
# ---------------------------------------------------------------------------


def rollout_dataset(policy, dataset: Dataset, predictor, cost_model: CostModel,
                    loss_kind: str, alpha: float, seed: int, workers: int = 1,
                    exclude_rows: bool = False, limit: int | None = None):
    """Roll a policy over dataset rows with per-instance RNG streams.

    Episode i always uses the stream (seed, i), so results are identical
    for any worker count; reduction is by ascending instance id.
    """
    if hasattr(policy, "prepare"):
        policy.prepare()
    n = dataset.n_samples if limit is None else min(limit, dataset.n_samples)
    raw = (dataset.standardization.invert(dataset.features[:n])
           if dataset.standardization is not None else dataset.features[:n])

    def run_one(i: int):
        env = AcquisitionEnvironment(
            raw[i], label=dataset.labels[i],
            standardization=dataset.standardization, instance_id=i,
            exclude_row=i if exclude_rows else None,
        )
        return rollout(policy, env, predictor, cost_model, loss_kind=loss_kind,
                       alpha=alpha, rng=np.random.default_rng((seed, i)))

    workers = worker_count(workers)
    if workers == 1:
        return [run_one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        traces = list(pool.map(run_one, range(n)))
    return sorted(traces, key=lambda t: t.instance_id)


def score_traces(traces, task_kind: str, alpha: float) -> dict:
    """Aggregate episode metrics for one (policy, alpha) cell."""
    metrics = {}
    if task_kind == CLASSIFICATION:
        correct = [
            int(np.argmax(t.final_prediction) == t.label) for t in traces
        ]
        metrics["accuracy"] = float(np.mean(correct))
    else:
        metrics["mse"] = float(np.mean([
            (t.final_prediction - t.label) ** 2 for t in traces
        ]))
    metrics["mean_acquisitions"] = float(np.mean([t.step_count for t in traces]))
    metrics["mean_cost"] = float(np.mean([t.total_cost for t in traces]))
    metrics["mean_final_loss"] = float(np.mean([t.final_loss for t in traces]))
    metrics["mean_return"] = float(np.mean([t.mdp_return for t in traces]))
    metrics["alpha"] = float(alpha)
    return metrics


def acquisition_histogram(traces, n_classes: int, d: int) -> np.ndarray:
    """Entry (c, j): fraction of class-c episodes that acquired feature j."""
    counts = np.zeros((n_classes, d))
    totals = np.zeros(n_classes)
    for trace in traces:
        c = int(trace.label)
        totals[c] += 1
        for j in trace.acquired:
            counts[c, j] += 1
    with np.errstate(invalid="ignore"):
        freq = counts / totals[:, None]
    return np.nan_to_num(freq)


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig) -> Report:
    train, val, test = prepare_splits(config.dataset, config.seed)
    predictor = build_predictor(config.predictor, train, config.dataset)
    index = build_index(train)
    cost_model = CostModel.uniform(train.n_features)
    policy_specs = [(MAIN_POLICY_NAME, config.policy)]
    for i, spec in enumerate(config.baselines):
        policy_specs.append((spec.get("name", f"{spec['kind']}-{i}"), spec))
    rows = []
    for alpha in config.alphas:
        for name, spec in policy_specs:
            started = time.perf_counter()
            policy = build_policy(spec, alpha, index, predictor, cost_model, config.loss)
            traces = rollout_dataset(
                policy, test, predictor, cost_model, config.loss, alpha,
                seed=config.seed, workers=config.workers, limit=config.test_limit,
            )
            metrics = score_traces(traces, test.task_kind, alpha)
            hist = None
            if test.task_kind == CLASSIFICATION:
                hist = acquisition_histogram(
                    traces, test.n_classes, test.n_features
                ).tolist()
            rows.append(ReportRow(
                policy=name, alpha=alpha, metrics=metrics, histogram=hist,
                wall_clock=time.perf_counter() - started,
            ))
    report = Report(rows, metadata={
        "dataset": config.dataset, "predictor": config.predictor,
        "policy": config.policy, "loss": config.loss, "seed": config.seed,
        "test_limit": config.test_limit,
    })
    if config.out_dir:
        write_report(report, config.out_dir)
    return report


@dataclass
class DecisionExperimentConfig:
    """Decision-AFA experiment: environment/bandit data, Q model, alpha sweep."""

    alphas: list[float]
    env: dict | None = None
    csv: dict | None = None
    q: dict = field(default_factory=dict)
    policy: dict = field(default_factory=dict)
    seed: int = 0
    train_fraction: float = 0.7
    eval_limit: int | None = None
    baseline_sizes: list[int] = field(default_factory=list)
    out_dir: str | None = None

    def __post_init__(self):
        if (self.env is None) == (self.csv is None):
            raise ConfigError("provide exactly one of env or csv")
        if not self.alphas:
            raise ConfigError("alphas must be a nonempty list")
        self.alphas = [float(a) for a in self.alphas]

    @classmethod
    def from_json(cls, path) -> "DecisionExperimentConfig":
        try:
            blob = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls(**blob)
        except TypeError as exc:
            raise ConfigError(f"bad config {path}: {exc}") from exc


def run_decision_experiment(config: DecisionExperimentConfig) -> Report:
    if config.env is not None:
        data = generate_decision_env(DecisionEnvConfig(**config.env))
    else:
        spec = dict(config.csv)
        schema = BanditSchema(
            tuple(spec["context_columns"]), spec["action_column"], spec["reward_column"]
        )
        data = load_bandit_csv(spec["path"], schema)
    rng = np.random.default_rng(config.seed)
    n = data.n_samples
    perm = rng.permutation(n)
    n_train = int(n * config.train_fraction)
    train = data.take(np.sort(perm[:n_train]))
    evalset = data.take(np.sort(perm[n_train:]))
    if config.eval_limit is not None:
        evalset = evalset.take(np.arange(min(config.eval_limit, evalset.n_samples)))
    X_train, params = standardize_contexts(train)
    X_eval = params.apply(evalset.features)

    q = fit_q(X_train, train.action, train.outcome, QConfig(**config.q))
    policy_spec = dict(config.policy)
    engine = policy_spec.pop("engine", "weighted-classification")
    variant = policy_spec.pop("variant", "regret")
    leaf = policy_spec.pop("min_samples_leaf", 1)
    table = PartialPolicyTable(q, X_train, engine=engine, seed=config.seed,
                               min_samples_leaf=leaf)
    cost_model = CostModel.uniform(data.n_features)
    full = full_policy(q)
    full_decisions = full.decide_rows(X_eval)
    full_value = estimate_value(full_decisions, X_eval, q)
    gt = evalset.ground_truth

    rows = []
    for alpha in config.alphas:
        started = time.perf_counter()
        search = SubsetSearchConfig(alpha=alpha, **policy_spec)
        policy = DecisionLookaheadPolicy(
            NeighborIndex(X_train), q, table, cost_model, search, variant=variant
        )
        subsets = acquire_contexts(policy, X_eval, seed=config.seed)
        decisions = decisions_for_subsets(table, X_eval, subsets)
        metrics = {
            "mean_acquisitions": float(np.mean([len(o) for o in subsets])),
            "estimated_value": estimate_value(decisions, X_eval, q),
            "full_value": full_value,
            "agreement_full": float(np.mean(decisions == full_decisions)),
        }
        if gt is not None:
            metrics["optimal_rate"] = optimal_rate(decisions, gt.optimal_action)
        rows.append(ReportRow("decision-lookahead", alpha, metrics,
                              wall_clock=time.perf_counter() - started))
    for size in config.baseline_sizes:
        started = time.perf_counter()
        subset = feature_selection_baseline(q, X_train, size, table)
        policy = table.get(subset)
        decisions = policy.decide_rows(X_eval)
        metrics = {
            "mean_acquisitions": float(size),
            "estimated_value": estimate_value(decisions, X_eval, q),
            "full_value": full_value,
            "agreement_full": float(np.mean(decisions == full_decisions)),
            "subset": list(subset),
        }
        if gt is not None:
            metrics["optimal_rate"] = optimal_rate(decisions, gt.optimal_action)
        rows.append(ReportRow(f"fixed-subset-{size}", 0.0, metrics,
                              wall_clock=time.perf_counter() - started))
    report = Report(rows, metadata={"q": config.q, "policy": config.policy,
                                    "seed": config.seed})
    if config.out_dir:
        write_report(report, config.out_dir)
    return report


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def report_to_dict(report: Report) -> dict:
    return {"metadata": report.metadata, "rows": [asdict(r) for r in report.rows]}


def write_report(report: Report, out_dir) -> None:
    """Emit report.json (full), report.csv (flat metrics), and plot data files.

    The CSV and plot files carry only deterministic quantities; wall-clock
    timings live in the JSON document alone.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report_to_dict(report), indent=2), encoding="utf-8"
    )
    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "alpha", "metric", "value"])
        for row in report.rows:
            for metric, value in sorted(row.metrics.items()):
                if isinstance(value, (int, float)):
                    writer.writerow([row.policy, repr(float(row.alpha)), metric,
                                     repr(float(value))])
    series: dict[str, list] = {}
    for row in report.rows:
        y_key = "accuracy" if "accuracy" in row.metrics else (
            "mse" if "mse" in row.metrics else "estimated_value"
        )
        if y_key not in row.metrics:
            continue
        series.setdefault(row.policy, []).append(
            (row.metrics["mean_acquisitions"], row.metrics[y_key], y_key)
        )
    for policy, points in series.items():
        points.sort(key=lambda p: p[0])
        safe = policy.replace("/", "_")
        with (out / f"plot_{safe}.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mean_acquisitions", points[0][2]])
            for x, y, _ in points:
                writer.writerow([repr(float(x)), repr(float(y))])


def load_report(path) -> Report:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = [ReportRow(**r) for r in blob["rows"]]
    return Report(rows, blob.get("metadata", {}))


def format_report(report: Report) -> str:
    """Human-readable table, one line per (policy, alpha)."""
    lines = []
    for row in report.rows:
        parts = [f"{row.policy:<24}", f"alpha={row.alpha:<8g}"]
        for metric, value in sorted(row.metrics.items()):
            if metric == "alpha" or not isinstance(value, (int, float)):
                continue
            parts.append(f"{metric}={value:.4f}")
        lines.append("  ".join(parts))
    return "\n".join(lines)
