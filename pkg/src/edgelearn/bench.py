"""Benchmark harness: synthetic heterogeneous data and the closed vs
incremental vs lifelong comparison.

The synthetic generator realizes the label-shift motif: tasks share the
same feature space but place their class boundaries at different points
along feature 0, so one global model cannot fit them all. The three arms:

* closed: one model fit on all training data, attributes ignored.
* incremental: one model maintained over the task sequence, scored
  prequentially (each task's test is evaluated before its training data
  joins the cumulative pool; the first task bootstraps the model and is
  scored after its own fit).
* lifelong: the full train/eval/deploy pipeline, scored through snapshot
  inference including unknown-task routing.
"""

from __future__ import annotations

import csv
import json
import random
import tempfile
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

from .data import AttrValue, Dataset, DatasetSchema, Sample, parse_schema
from .edge import EdgeRuntime
from .errors import ConfigError, DataError
from .job import JobConfig, LifelongJob
from .kb import DeploySnapshot, KnowledgeBase
from .learners import EstimatorSpec, EvalMetrics, evaluate, fit, metrics_from_json, metrics_to_json
from .tasks import BucketingConfig, TaskPartition, mine_tasks

METHOD_CLOSED = "closed"
METHOD_INCREMENTAL = "incremental"
METHOD_LIFELONG = "lifelong"


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticTask:
    """One task: its attribute tuple, per-feature uniform ranges, and a
    threshold rule over feature 0 mapping left-inclusive regions to classes."""

    attributes: tuple[AttrValue, ...]
    ranges: tuple[tuple[float, float], ...]
    thresholds: tuple[float, ...]
    region_classes: tuple[str, ...]
    noise: float
    n_samples: int


@dataclass(frozen=True)
class SyntheticSpec:
    schema: DatasetSchema
    tasks: tuple[SyntheticTask, ...]
    seed: int

    def __post_init__(self):
        for i, task in enumerate(self.tasks):
            if len(task.ranges) != self.schema.n_features:
                raise ConfigError(f"task {i}: needs one range per feature")
            for lo, hi in task.ranges:
                if not lo < hi:
                    raise ConfigError(f"task {i}: empty feature range [{lo},{hi}]")
            if any(a >= b for a, b in zip(task.thresholds, task.thresholds[1:])):
                raise ConfigError(f"task {i}: thresholds must be strictly increasing")
            lo0, hi0 = task.ranges[0]
            if any(not lo0 < t < hi0 for t in task.thresholds):
                raise ConfigError(
                    f"task {i}: thresholds must lie inside the feature-0 range "
                    f"so every region covers part of it"
                )
            if len(task.region_classes) != len(task.thresholds) + 1:
                raise ConfigError(f"task {i}: needs one class per region")
            for c in task.region_classes:
                if c not in (self.schema.label_classes or ()):
                    raise ConfigError(f"task {i}: class {c!r} not declared in the schema")
            if not 0.0 <= task.noise < 0.5:
                raise ConfigError(f"task {i}: noise must be in [0, 0.5)")
            if task.n_samples < 1:
                raise ConfigError(f"task {i}: n_samples must be >= 1")
            if len(task.attributes) != self.schema.n_attributes:
                raise ConfigError(f"task {i}: attribute tuple does not match the schema")


def rule_label(task: SyntheticTask, x0: float) -> str:
    """Noise-free label for a feature-0 value: region boundaries are
    left-inclusive (x >= threshold moves to the next region)."""
    return task.region_classes[bisect_right(task.thresholds, x0)]


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministically generate the dataset: per task, uniform features in
    the declared ranges, rule labels, and independent label flips (to a
    uniformly chosen other class) at the configured noise rate."""
    rng = random.Random(spec.seed)
    classes = spec.schema.label_classes
    samples = []
    for task in spec.tasks:
        for _ in range(task.n_samples):
            features = tuple(rng.uniform(lo, hi) for lo, hi in task.ranges)
            label = rule_label(task, features[0])
            if rng.random() < task.noise:
                others = [c for c in classes if c != label]
                label = others[rng.randrange(len(others))]
            samples.append(Sample(features, task.attributes, label))
    return Dataset(spec.schema, tuple(samples))


def parse_synthetic_spec(config_text: str) -> SyntheticSpec:
    """Parse a JSON synthetic spec.

    Keys: ``seed``, ``schema`` (inline schema config object), ``tasks``
    [{attributes, ranges, thresholds, classes, noise, n}].
    """
    try:
        raw = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"synthetic spec is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("synthetic spec must be a JSON object")
    try:
        schema = parse_schema(json.dumps(raw["schema"]))
        tasks = tuple(
            SyntheticTask(
                attributes=tuple(entry["attributes"]),
                ranges=tuple((float(lo), float(hi)) for lo, hi in entry["ranges"]),
                thresholds=tuple(float(t) for t in entry["thresholds"]),
                region_classes=tuple(entry["classes"]),
                noise=float(entry.get("noise", 0.0)),
                n_samples=int(entry["n"]),
            )
            for entry in raw["tasks"]
        )
        return SyntheticSpec(schema=schema, tasks=tasks, seed=int(raw.get("seed", 0)))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from exc


# ---------------------------------------------------------------------------
# Benchmark arms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodResult:
    """Per-task metrics and exact sample-weighted overall accuracy."""

    per_task: dict[str, EvalMetrics]
    overall_accuracy: float

    @classmethod
    def from_metrics(cls, per_task: dict[str, EvalMetrics]) -> "MethodResult":
        total = sum(m.n for m in per_task.values())
        correct = sum(m.correct for m in per_task.values())
        if total == 0:
            raise DataError("no test samples to score")
        return cls(per_task=per_task, overall_accuracy=correct / total)


@dataclass(frozen=True)
class BenchResult:
    methods: dict[str, MethodResult]
    improvements: dict[str, float]          # per task, lifelong vs incremental
    overall_improvements: dict[str, float]  # "vs_closed", "vs_incremental"


def relative_improvement(accuracy: float, baseline: float) -> float:
    """Percent relative improvement 100*(a-b)/b; the baseline must be > 0."""
    if baseline <= 0.0:
        raise DataError("zero baseline: relative improvement undefined")
    return 100.0 * (accuracy - baseline) / baseline


def _evaluate_per_task(model, test_partition: TaskPartition) -> dict[str, EvalMetrics]:
    return {
        key: evaluate(model, test_partition.parts[key])
        for key in test_partition.keys
    }


def baseline_closed(
    train: Dataset,
    test: Dataset,
    learner: EstimatorSpec,
    seed: int,
    bucketing: BucketingConfig | None = None,
) -> MethodResult:
    """One model fit on all training data, task structure ignored; scored
    per task on the test set for comparability."""
    if bucketing is None:
        bucketing = BucketingConfig.from_schema(train.schema)
    model = fit(learner, train, seed)
    return MethodResult.from_metrics(_evaluate_per_task(model, mine_tasks(test, bucketing)))


def baseline_incremental(
    task_stream: list[tuple[str, Dataset, Dataset]],
    learner: EstimatorSpec,
    seed: int,
) -> MethodResult:
    """Prequential single-model baseline over an ordered task stream of
    (key, train, test) entries. Each task's test is scored against the model
    trained on all previous tasks; its training data then joins the pool.
    The first task with training data bootstraps the model and is scored
    after its own fit. Empty train or test parts are allowed and skipped."""
    if not task_stream:
        raise DataError("task stream is empty")
    per_task: dict[str, EvalMetrics] = {}
    pool: list[Sample] = []
    model = None
    schema = None
    for key, train_part, test_part in task_stream:
        schema = train_part.schema if len(train_part) else test_part.schema
        if model is None and len(train_part) > 0:
            pool.extend(train_part.samples)
            model = fit(learner, Dataset(schema, tuple(pool)), seed)
            if len(test_part) > 0:
                per_task[key] = evaluate(model, test_part)
            continue
        if len(test_part) > 0:
            if model is None:
                raise DataError(f"task {key!r} has no model to evaluate yet")
            per_task[key] = evaluate(model, test_part)
        if len(train_part) > 0:
            pool.extend(train_part.samples)
            model = fit(learner, Dataset(schema, tuple(pool)), seed)
    return MethodResult.from_metrics(per_task)


@dataclass(frozen=True)
class LifelongBenchOutcome:
    result: MethodResult
    snapshot: DeploySnapshot


def run_lifelong_bench(
    train: Dataset,
    test: Dataset,
    cfg: JobConfig,
    kb_path: str | Path | None = None,
) -> LifelongBenchOutcome:
    """Full pipeline: train on the training set, gate on the test set's task
    partition, deploy, then score every test sample through snapshot
    inference (unknown test tasks route to similar models or the fallback)."""
    if kb_path is None:
        with tempfile.TemporaryDirectory(prefix="edgelearn-bench-") as tmp:
            return run_lifelong_bench(train, test, cfg, tmp)
    kb = KnowledgeBase.open(kb_path)
    job = LifelongJob(cfg, kb)
    job.run_train(train)
    job.run_eval(test)
    snapshot = job.run_deploy()

    runtime = EdgeRuntime(train.schema, cfg.bucketing)
    runtime.apply_snapshot(snapshot)
    classes = train.schema.label_classes
    index = {c: i for i, c in enumerate(classes)}
    per_task: dict[str, EvalMetrics] = {}
    partition = mine_tasks(test, cfg.bucketing)
    for key in partition.keys:
        counts = [[0] * len(classes) for _ in classes]
        for sample in partition.parts[key].samples:
            prediction = runtime.infer(sample)
            counts[index[sample.label]][index[prediction.label]] += 1
        per_task[key] = EvalMetrics.from_counts(
            tuple(classes), tuple(tuple(row) for row in counts)
        )
    return LifelongBenchOutcome(MethodResult.from_metrics(per_task), snapshot)


def run_bench(
    train: Dataset,
    test: Dataset,
    cfg: JobConfig,
    work_dir: str | Path | None = None,
) -> BenchResult:
    """Run all three arms on the same train/test pair and compute relative
    improvements of the lifelong arm over the baselines. The lifelong arm's
    knowledge base lives under *work_dir* when given (a temp dir otherwise)."""
    train.require_labeled()
    test.require_labeled()
    closed = baseline_closed(train, test, cfg.learner, cfg.seed, cfg.bucketing)

    train_parts = mine_tasks(train, cfg.bucketing)
    test_parts = mine_tasks(test, cfg.bucketing)
    empty = Dataset(train.schema)
    # training-backed tasks first; test-only tasks arrive as "future" tasks
    # scored with whatever model the stream has produced by then
    stream_keys = train_parts.keys + sorted(set(test_parts.parts) - set(train_parts.parts))
    stream = [
        (
            key,
            train_parts.parts.get(key, empty),
            test_parts.parts.get(key, empty),
        )
        for key in stream_keys
    ]
    incremental = baseline_incremental(stream, cfg.learner, cfg.seed)
    kb_path = Path(work_dir) / "lifelong_kb" if work_dir is not None else None
    lifelong = run_lifelong_bench(train, test, cfg, kb_path).result

    improvements = {}
    for key, metrics in sorted(lifelong.per_task.items()):
        base = incremental.per_task.get(key)
        if base is not None and base.accuracy > 0.0:
            improvements[key] = relative_improvement(metrics.accuracy, base.accuracy)
    overall = {}
    if closed.overall_accuracy > 0.0:
        overall["vs_closed"] = relative_improvement(
            lifelong.overall_accuracy, closed.overall_accuracy
        )
    if incremental.overall_accuracy > 0.0:
        overall["vs_incremental"] = relative_improvement(
            lifelong.overall_accuracy, incremental.overall_accuracy
        )
    return BenchResult(
        methods={
            METHOD_CLOSED: closed,
            METHOD_INCREMENTAL: incremental,
            METHOD_LIFELONG: lifelong,
        },
        improvements=improvements,
        overall_improvements=overall,
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

ACCURACY_FILE = "accuracy.csv"
IMPROVEMENT_FILE = "improvement.csv"
SUMMARY_FILE = "summary.json"


def emit_report(result: BenchResult, out_dir: str | Path) -> list[Path]:
    """Write the per-task accuracy table, the relative-improvement table
    (sorted by improvement, descending), and a machine-readable summary.
    Output is bit-stable for identical results."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    accuracy_path = out / ACCURACY_FILE
    with accuracy_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_key", "method", "accuracy", "n"])
        rows = []
        for method, mres in result.methods.items():
            for key, metrics in mres.per_task.items():
                rows.append((key, method, repr(metrics.accuracy), str(metrics.n)))
        for row in sorted(rows):
            writer.writerow(row)

    improvement_path = out / IMPROVEMENT_FILE
    with improvement_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_key", "improvement_pct"])
        ordered = sorted(result.improvements.items(), key=lambda kv: (-kv[1], kv[0]))
        for key, pct in ordered:
            writer.writerow([key, repr(pct)])

    summary_path = out / SUMMARY_FILE
    doc = {
        "methods": {
            method: {
                "overall_accuracy": mres.overall_accuracy,
                "per_task": {
                    key: metrics_to_json(metrics)
                    for key, metrics in sorted(mres.per_task.items())
                },
            }
            for method, mres in sorted(result.methods.items())
        },
        "improvements": result.improvements,
        "overall_improvements": result.overall_improvements,
    }
    summary_path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    return [accuracy_path, improvement_path, summary_path]


def parse_summary(path: str | Path) -> BenchResult:
    """Rebuild a BenchResult from an emitted summary file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        methods = {
            method: MethodResult(
                per_task={
                    key: metrics_from_json(m) for key, m in entry["per_task"].items()
                },
                overall_accuracy=entry["overall_accuracy"],
            )
            for method, entry in doc["methods"].items()
        }
        return BenchResult(
            methods=methods,
            improvements=doc["improvements"],
            overall_improvements=doc["overall_improvements"],
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad summary file {path}: {exc}") from exc


def format_report_text(result: BenchResult) -> str:
    """Human-readable rendering of a BenchResult for the CLI."""
    lines = ["method overall accuracies:"]
    for method in (METHOD_CLOSED, METHOD_INCREMENTAL, METHOD_LIFELONG):
        if method in result.methods:
            lines.append(f"  {method:<12} {result.methods[method].overall_accuracy:.4f}")
    for name, pct in sorted(result.overall_improvements.items()):
        lines.append(f"lifelong improvement {name.replace('_', ' ')}: {pct:+.2f}%")
    lines.append("")
    lines.append(f"{'task_key':<24} {'method':<12} {'accuracy':>9} {'n':>6}")
    for method, mres in sorted(result.methods.items()):
        for key, metrics in sorted(mres.per_task.items()):
            lines.append(f"{key:<24} {method:<12} {metrics.accuracy:>9.4f} {metrics.n:>6}")
    if result.improvements:
        lines.append("")
        lines.append(f"{'task_key':<24} {'improvement_pct':>16}")
        ordered = sorted(result.improvements.items(), key=lambda kv: (-kv[1], kv[0]))
        for key, pct in ordered:
            lines.append(f"{key:<24} {pct:>+16.2f}")
    return "\n".join(lines) + "\n"
