"""Lifelong learning job: the train -> evaluate -> deploy cycle over a
knowledge base, plus the update cycle that folds newly labeled edge data
back in so the next cycle knows one more task.

Raw training data is never retained in the KB; retraining an existing task
uses only the newly arrived data (augmented by sample transfer within the
new batch). The fallback model is refit on each cycle's pooled training
data.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field
from enum import Enum

from .data import Dataset, DatasetSchema, split_dataset
from .errors import ConfigError, DataError, PhaseError
from .kb import (
    STATUS_DEPLOYABLE,
    STATUS_EVAL_FAILED,
    STATUS_TRAINED,
    DeploySnapshot,
    KnowledgeBase,
    TaskRecord,
    sample_stats,
)
from .learners import EstimatorSpec, EvalMetrics, evaluate, fit
from .tasks import BucketingConfig, mine_tasks, sample_transfer, task_similarity

REASON_BELOW_THRESHOLD = "below-threshold"
REASON_TOO_FEW_SAMPLES = "too-few-samples"


@dataclass(frozen=True)
class EvalPolicy:
    """Deploy gate: a task model ships only if it was evaluated on at least
    ``min_eval_samples`` samples and reached ``min_accuracy``."""

    min_accuracy: float = 0.0
    min_eval_samples: int = 1

    def __post_init__(self):
        if not 0.0 <= self.min_accuracy <= 1.0:
            raise ConfigError("min_accuracy must be in [0,1]")
        if self.min_eval_samples < 1:
            raise ConfigError("min_eval_samples must be >= 1")


@dataclass(frozen=True)
class TransferPolicy:
    min_samples: int = 30
    cap: int = 1000

    def __post_init__(self):
        if self.min_samples < 0 or self.cap < 0:
            raise ConfigError("transfer bounds must be non-negative")


@dataclass(frozen=True)
class TriggerPolicy:
    """Retraining fires once this many labeled feedback samples accumulate."""

    unseen_threshold: int = 10

    def __post_init__(self):
        if self.unseen_threshold < 1:
            raise ConfigError("unseen_threshold must be >= 1")


@dataclass(frozen=True)
class JobConfig:
    learner: EstimatorSpec
    bucketing: BucketingConfig
    eval_policy: EvalPolicy = EvalPolicy()
    transfer: TransferPolicy = TransferPolicy()
    trigger: TriggerPolicy = TriggerPolicy()
    fallback_enabled: bool = True
    seed: int = 0


class Phase(Enum):
    IDLE = "Idle"
    TRAINING = "Training"
    EVALUATING = "Evaluating"
    DEPLOYING = "Deploying"
    DEPLOYED = "Deployed"


_LEGAL_TRANSITIONS = {
    Phase.IDLE: (Phase.TRAINING,),
    Phase.TRAINING: (Phase.EVALUATING,),
    Phase.EVALUATING: (Phase.DEPLOYING,),
    Phase.DEPLOYING: (Phase.DEPLOYED,),
    Phase.DEPLOYED: (Phase.TRAINING,),
}


@dataclass
class JobState:
    """Phase machine with an append-only, replayable transition history."""

    phase: Phase = Phase.IDLE
    snapshot_version: int = 0
    history: list[tuple[str, str, float]] = field(default_factory=list)


@dataclass(frozen=True)
class TaskEvalOutcome:
    key: str
    metrics: EvalMetrics | None
    passed: bool
    reason: str | None = None


@dataclass(frozen=True)
class EvalReport:
    """Per-task gate decisions plus ungated fallback metrics."""

    outcomes: tuple[TaskEvalOutcome, ...]
    fallback_metrics: EvalMetrics | None

    def outcome(self, key: str) -> TaskEvalOutcome | None:
        for o in self.outcomes:
            if o.key == key:
                return o
        return None


class LifelongJob:
    """One lifelong learning job bound to a config and a knowledge base.

    Single-threaded over its phase machine; stage internals process tasks
    in sorted key order so results are deterministic.
    """

    def __init__(self, cfg: JobConfig, kb: KnowledgeBase, clock=None):
        self.cfg = cfg
        self.kb = kb
        self.state = JobState()
        self._clock = clock if clock is not None else time.time

    # -- phase machine -------------------------------------------------------

    def _transition(self, target: Phase) -> None:
        if target not in _LEGAL_TRANSITIONS[self.state.phase]:
            raise PhaseError(
                f"illegal transition {self.state.phase.value} -> {target.value}"
            )
        self.state.history.append(
            (self.state.phase.value, target.value, float(self._clock()))
        )
        self.state.phase = target

    def _require_phase(self, *phases: Phase) -> None:
        if self.state.phase not in phases:
            allowed = " or ".join(p.value for p in phases)
            raise PhaseError(
                f"operation requires phase {allowed}, current is {self.state.phase.value}"
            )

    # -- stages ---------------------------------------------------------------

    def run_train(self, train: Dataset) -> list[TaskRecord]:
        """Mine tasks, fit one model per task (sample transfer topping up
        small tasks), fit the fallback on the full set, and upsert everything.
        Ends in the Evaluating phase."""
        self._require_phase(Phase.IDLE, Phase.DEPLOYED)
        if len(train) == 0:
            raise DataError("training dataset is empty")
        train.require_labeled()
        self._transition(Phase.TRAINING)

        cfg = self.cfg
        partition = mine_tasks(train, cfg.bucketing)
        known_attrs = {key: rec.attributes for key, rec in self.kb.records.items()}
        for key in partition.keys:
            known_attrs[key] = partition.attributes[key]

        stored: list[TaskRecord] = []
        for key in partition.keys:
            transfer = sample_transfer(
                key, partition, cfg.transfer.min_samples, cfg.transfer.cap
            )
            artifact = fit(cfg.learner, transfer.dataset, cfg.seed)
            relations = []
            for other_key in sorted(known_attrs):
                if other_key == key:
                    continue
                sim = task_similarity(partition.attributes[key], known_attrs[other_key])
                if sim > 0.0:
                    relations.append((other_key, sim))
            record = TaskRecord(
                key=key,
                attributes=partition.attributes[key],
                model=artifact,
                spec=cfg.learner,
                sample_stats=sample_stats(partition.parts[key]),
                relations=tuple(relations),
                status=STATUS_TRAINED,
            )
            self.kb.upsert_task(record)
            stored.append(self.kb.lookup(key))

        if cfg.fallback_enabled:
            self.kb.set_fallback(fit(cfg.learner, train, cfg.seed))

        self._transition(Phase.EVALUATING)
        return stored

    def run_eval(self, eval_set: Dataset) -> EvalReport:
        """Gate every freshly trained record against the eval policy using
        its own slice of the eval set; tasks with too few eval samples fail.
        The fallback is evaluated on the whole set but never gated. Ends in
        the Deploying phase."""
        self._require_phase(Phase.EVALUATING)
        if len(eval_set) == 0:
            raise DataError("eval dataset is empty")
        eval_set.require_labeled()

        cfg = self.cfg
        partition = mine_tasks(eval_set, cfg.bucketing)
        pending = sorted(
            key for key, rec in self.kb.records.items() if rec.status == STATUS_TRAINED
        )
        outcomes: list[TaskEvalOutcome] = []
        for key in pending:
            record = self.kb.lookup(key)
            part = partition.parts.get(key)
            n_eval = len(part) if part is not None else 0
            metrics = evaluate(record.model, part) if n_eval > 0 else None
            if n_eval < cfg.eval_policy.min_eval_samples:
                outcome = TaskEvalOutcome(key, metrics, False, REASON_TOO_FEW_SAMPLES)
                self.kb.record_eval(key, STATUS_EVAL_FAILED, metrics)
            elif metrics.accuracy >= cfg.eval_policy.min_accuracy:
                outcome = TaskEvalOutcome(key, metrics, True)
                self.kb.record_eval(key, STATUS_DEPLOYABLE, metrics)
            else:
                outcome = TaskEvalOutcome(key, metrics, False, REASON_BELOW_THRESHOLD)
                self.kb.record_eval(key, STATUS_EVAL_FAILED, metrics)
            outcomes.append(outcome)

        fallback_metrics = None
        if self.kb.fallback is not None:
            fallback_metrics = evaluate(self.kb.fallback, eval_set)

        self._transition(Phase.DEPLOYING)
        return EvalReport(tuple(outcomes), fallback_metrics)

    def run_deploy(self) -> DeploySnapshot:
        """Freeze the deployable records into a snapshot. Ends Deployed."""
        self._require_phase(Phase.DEPLOYING)
        snapshot = self.kb.snapshot()
        self._transition(Phase.DEPLOYED)
        self.state.snapshot_version = snapshot.snapshot_version
        return snapshot

    def run_update_cycle(self, new_labeled: Dataset) -> DeploySnapshot:
        """Full retrain cycle on newly labeled data: per-task 80/20 holdout
        split, train, evaluate, deploy. A task key present in the new data
        is guaranteed to be in the KB afterwards."""
        self._require_phase(Phase.DEPLOYED)
        return self._run_cycle(new_labeled)

    def bootstrap(self, initial: Dataset) -> DeploySnapshot:
        """Initial cycle from the Idle phase (same split protocol as updates)."""
        self._require_phase(Phase.IDLE)
        return self._run_cycle(initial)

    def _run_cycle(self, data: Dataset) -> DeploySnapshot:
        if len(data) == 0:
            raise DataError("cycle dataset is empty")
        data.require_labeled()
        train_part, eval_part = holdout_split(data, 0.8, self.cfg.seed, self.cfg.bucketing)
        self.run_train(train_part)
        self.run_eval(eval_part if len(eval_part) > 0 else train_part)
        return self.run_deploy()


def holdout_split(
    data: Dataset, train_fraction: float, seed: int, bucketing: BucketingConfig
) -> tuple[Dataset, Dataset]:
    """Split stratified by task so every incoming task key lands in the
    training part (a task with a single sample contributes it to training).
    Deterministic: each task uses a seed derived from the job seed and its key.
    """
    partition = mine_tasks(data, bucketing)
    train_samples = []
    eval_samples = []
    for key in partition.keys:
        part = partition.parts[key]
        if len(part) == 1:
            train_samples.extend(part.samples)
            continue
        derived = (seed * 1000003 + zlib.crc32(key.encode("utf-8"))) & 0x7FFFFFFF
        first, second = split_dataset(part, train_fraction, derived)
        train_samples.extend(first.samples)
        eval_samples.extend(second.samples)
    return (
        Dataset(data.schema, tuple(train_samples)),
        Dataset(data.schema, tuple(eval_samples)),
    )


# ---------------------------------------------------------------------------
# Config file parsing
# ---------------------------------------------------------------------------

def parse_job_config(config_text: str, schema: DatasetSchema) -> JobConfig:
    """Parse a JSON job config against a schema.

    Keys: ``learner`` {kind, hyperparameters}, ``bucketing`` (attribute
    column -> edge list, or null for categorical; omit to use the schema's
    declared edges), ``eval_policy`` {min_accuracy, min_eval_samples},
    ``transfer`` {min_samples, cap}, ``trigger`` {unseen_threshold},
    ``fallback_enabled``, ``seed``.
    """
    try:
        raw = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"job config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("job config must be a JSON object")
    try:
        learner_doc = raw["learner"]
        learner = EstimatorSpec(
            kind=learner_doc["kind"],
            hyperparameters=learner_doc.get("hyperparameters", {}),
        )
        bucketing = BucketingConfig.from_schema(schema)
        if "bucketing" in raw:
            by_column = raw["bucketing"]
            edges = []
            for i, name in enumerate(schema.attribute_columns):
                if name in by_column:
                    declared = by_column[name]
                    edges.append(None if declared is None else tuple(float(e) for e in declared))
                else:
                    edges.append(bucketing.edges[i])
            unknown = set(by_column) - set(schema.attribute_columns)
            if unknown:
                raise ConfigError(f"bucketing names unknown attribute columns {sorted(unknown)}")
            bucketing = BucketingConfig(tuple(edges))
        eval_doc = raw.get("eval_policy", {})
        transfer_doc = raw.get("transfer", {})
        trigger_doc = raw.get("trigger", {})
        return JobConfig(
            learner=learner,
            bucketing=bucketing,
            eval_policy=EvalPolicy(
                min_accuracy=eval_doc.get("min_accuracy", 0.0),
                min_eval_samples=eval_doc.get("min_eval_samples", 1),
            ),
            transfer=TransferPolicy(
                min_samples=transfer_doc.get("min_samples", 30),
                cap=transfer_doc.get("cap", 1000),
            ),
            trigger=TriggerPolicy(
                unseen_threshold=trigger_doc.get("unseen_threshold", 10)
            ),
            fallback_enabled=raw.get("fallback_enabled", True),
            seed=raw.get("seed", 0),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad job config: {exc}") from exc
