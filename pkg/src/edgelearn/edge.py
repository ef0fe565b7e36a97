"""Edge-side runtime: task allocation against the deployed snapshot,
unknown-task detection, unseen-sample buffering, retrain triggering.

Inference never talks to the cloud. A sample whose bucketed attribute key
exists in the active snapshot routes to that task's model; otherwise it is
an unknown task and falls back to (a) the most similar snapshot task at or
above the similarity threshold, else (b) the global fallback model.
Unknown samples are buffered for upload; labeled feedback accumulates
until the trigger policy fires a retrain request.

All state transitions are guarded by one lock: concurrent infer calls,
buffer drains, and snapshot swaps never observe partial state.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass

from .data import DatasetSchema, Sample, TaskAttrValues
from .errors import DataError, NoModelError
from .job import TriggerPolicy
from .kb import DeploySnapshot
from .learners import predict
from .tasks import BucketingConfig, bucket_attributes, task_key, task_similarity

ROUTE_KNOWN = "known"
ROUTE_SIMILAR = "similar"
ROUTE_FALLBACK = "fallback"

DEFAULT_SIMILARITY_THRESHOLD = 0.75
DEFAULT_UNSEEN_CAP = 10_000


@dataclass(frozen=True)
class Prediction:
    """One inference result and how it was routed."""

    label: str | float
    route: str
    task_key: str | None
    similarity: float | None
    snapshot_version: int


@dataclass(frozen=True)
class IngestResult:
    accepted: int
    rejected: tuple[tuple[int, str], ...] = ()


def allocate_task(
    snapshot: DeploySnapshot, attrs: TaskAttrValues, bucketing: BucketingConfig
) -> str | None:
    """Return the matching task key in the snapshot, or None for an
    unknown task. Purely attribute-driven: known iff the exact bucketed
    key is present."""
    key = task_key(bucket_attributes(attrs, bucketing))
    return key if key in snapshot.tasks else None


class EdgeRuntime:
    """Holds the active snapshot and serves predictions with zero cloud
    connectivity. Thread-safe."""

    def __init__(
        self,
        schema: DatasetSchema,
        bucketing: BucketingConfig,
        similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
        unseen_cap: int = DEFAULT_UNSEEN_CAP,
    ):
        self.schema = schema
        self.bucketing = bucketing
        self.similarity_threshold = similarity_threshold
        self.unseen_cap = unseen_cap
        self.active: DeploySnapshot | None = None
        self.pending: DeploySnapshot | None = None
        self._unseen: list[Sample] = []
        self._feedback: list[Sample] = []
        self.counters = {
            "inferences": 0,
            "known_hits": 0,
            "unknown_hits": 0,
            "triggers_fired": 0,
            "unseen_dropped": 0,
            "no_model_errors": 0,
        }
        self._lock = threading.Lock()

    # -- snapshot management --------------------------------------------------

    def apply_snapshot(self, snapshot: DeploySnapshot) -> str:
        """Swap in a newer snapshot atomically. Returns "applied" or
        "rejected-stale" (strictly newer versions only)."""
        with self._lock:
            if (
                self.active is not None
                and snapshot.snapshot_version <= self.active.snapshot_version
            ):
                return "rejected-stale"
            self.pending = snapshot
            self.active = self.pending
            self.pending = None
            return "applied"

    @property
    def snapshot_version(self) -> int | None:
        active = self.active
        return active.snapshot_version if active is not None else None

    # -- inference --------------------------------------------------------------

    def infer(self, sample: Sample) -> Prediction:
        """Predict one sample against the active snapshot (label ignored).

        Unknown-task samples are buffered for upload; if neither a similar
        task nor a fallback model exists, raises NoModelError (counted).
        """
        if len(sample.features) != self.schema.n_features:
            raise DataError(
                f"expected {self.schema.n_features} features, got {len(sample.features)}"
            )
        bucketed = bucket_attributes(sample.attributes, self.bucketing)
        key = task_key(bucketed)
        with self._lock:
            self.counters["inferences"] += 1
            snapshot = self.active
            if snapshot is None:
                self.counters["no_model_errors"] += 1
                raise NoModelError("no snapshot applied yet")
            if key in snapshot.tasks:
                self.counters["known_hits"] += 1
                entry = snapshot.tasks[key]
                return Prediction(
                    label=predict(entry.model, sample.features),
                    route=ROUTE_KNOWN,
                    task_key=key,
                    similarity=None,
                    snapshot_version=snapshot.snapshot_version,
                )

            # unknown task: buffer for upload, then walk the fallback chain
            self.counters["unknown_hits"] += 1
            self._unseen.append(sample)
            if len(self._unseen) > self.unseen_cap:
                del self._unseen[0]
                self.counters["unseen_dropped"] += 1

            best_key = None
            best_sim = 0.0
            for task, entry in sorted(snapshot.tasks.items()):
                sim = task_similarity(bucketed, entry.attributes)
                if sim > best_sim:
                    best_key, best_sim = task, sim
            if best_key is not None and best_sim >= self.similarity_threshold:
                entry = snapshot.tasks[best_key]
                return Prediction(
                    label=predict(entry.model, sample.features),
                    route=ROUTE_SIMILAR,
                    task_key=best_key,
                    similarity=best_sim,
                    snapshot_version=snapshot.snapshot_version,
                )
            if snapshot.fallback is not None:
                return Prediction(
                    label=predict(snapshot.fallback, sample.features),
                    route=ROUTE_FALLBACK,
                    task_key=None,
                    similarity=None,
                    snapshot_version=snapshot.snapshot_version,
                )
            self.counters["no_model_errors"] += 1
            raise NoModelError(
                f"no model for unknown task {key!r}: best similarity {best_sim} "
                f"below threshold {self.similarity_threshold} and no fallback"
            )

    # -- feedback and upload ------------------------------------------------------

    def ingest_feedback(self, labeled: list[Sample]) -> IngestResult:
        """Append labeled, schema-conformant samples to the feedback buffer;
        malformed ones are rejected individually with reasons."""
        accepted = []
        rejected = []
        for i, sample in enumerate(labeled):
            if sample.label is None:
                rejected.append((i, "unlabeled"))
                continue
            try:
                self.schema.validate_sample(sample)
            except DataError as exc:
                rejected.append((i, str(exc)))
                continue
            accepted.append(sample)
        with self._lock:
            self._feedback.extend(accepted)
        return IngestResult(accepted=len(accepted), rejected=tuple(rejected))

    def should_trigger(self, policy: TriggerPolicy) -> tuple[bool, str | None]:
        """Pure check: retrain when the feedback buffer reaches the threshold."""
        with self._lock:
            if len(self._feedback) >= policy.unseen_threshold:
                return True, "count-threshold"
        return False, None

    def fire_trigger(self, policy: TriggerPolicy) -> tuple[list[Sample], list[Sample]] | None:
        """If the trigger condition holds, count the firing and drain both
        buffers for upload in one atomic step; otherwise None."""
        with self._lock:
            if len(self._feedback) < policy.unseen_threshold:
                return None
            self.counters["triggers_fired"] += 1
            labeled, self._feedback = self._feedback, []
            unseen, self._unseen = self._unseen, []
        return labeled, unseen

    def drain_for_upload(self) -> tuple[list[Sample], list[Sample]]:
        """Atomically return and clear (labeled feedback, unseen samples)."""
        with self._lock:
            labeled, self._feedback = self._feedback, []
            unseen, self._unseen = self._unseen, []
        return labeled, unseen

    # -- introspection ----------------------------------------------------------

    def status(self) -> dict:
        """Counters and route statistics as a JSON-serializable document."""
        with self._lock:
            return {
                "counters": dict(self.counters),
                "feedback_buffer": len(self._feedback),
                "unseen_buffer": len(self._unseen),
                "snapshot_version": (
                    self.active.snapshot_version if self.active is not None else None
                ),
            }

    def status_json(self) -> str:
        return json.dumps(self.status(), indent=2, sort_keys=True)
