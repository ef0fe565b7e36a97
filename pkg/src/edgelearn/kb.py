"""Cloud-side task knowledge base: a versioned, persistent index of task
records plus a global fallback model for unknown tasks.

Store layout (one directory per KB)::

    index.json            manifest: {"format": 1, "crc32": <crc of body>, "body": {...}}
    models/<key>.<v>.bin  one file per model artifact, CRC32-checked

The manifest body carries the schema fingerprint, the KB version counter,
and per-task metadata (key, version, status, stats, relations, eval,
model file + checksum). Every mutation writes model files first, then
replaces the manifest atomically (temp file + rename), so a crash at any
point leaves the previous consistent state intact. Superseded model files
stay on disk but are no longer referenced; only the latest version per
task is retrievable.

There is no delete operation: task knowledge only accumulates.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, replace
from hashlib import sha256
from pathlib import Path
from urllib.parse import quote

from .data import Dataset
from .errors import (
    CorruptStoreError,
    NothingDeployableError,
    SchemaMismatchError,
    SerializationError,
    StoreError,
)
from .learners import (
    EstimatorSpec,
    EvalMetrics,
    ModelArtifact,
    canonical_json_bytes,
    deserialize_model,
    metrics_from_json,
    metrics_to_json,
    serialize_model,
)
from .tasks import BucketedAttributes, task_similarity

STATUS_TRAINED = "trained"
STATUS_DEPLOYABLE = "deployable"
STATUS_EVAL_FAILED = "eval_failed"
_STATUSES = (STATUS_TRAINED, STATUS_DEPLOYABLE, STATUS_EVAL_FAILED)

_INDEX_NAME = "index.json"
_MODELS_DIR = "models"


@dataclass(frozen=True)
class SampleStats:
    """Summary of a task's own samples kept in place of the raw data."""

    count: int
    class_histogram: dict
    feature_mean: tuple[float, ...]
    feature_min: tuple[float, ...]
    feature_max: tuple[float, ...]


def sample_stats(dataset: Dataset) -> SampleStats:
    """Compute per-task stats for the KB record."""
    n = len(dataset)
    if n == 0:
        raise StoreError("cannot summarize an empty dataset")
    f = dataset.schema.n_features
    sums = [0.0] * f
    mins = [float("inf")] * f
    maxs = [float("-inf")] * f
    histogram: dict = {}
    for s in dataset.samples:
        for j, v in enumerate(s.features):
            sums[j] += v
            if v < mins[j]:
                mins[j] = v
            if v > maxs[j]:
                maxs[j] = v
        if dataset.schema.is_classification and s.label is not None:
            histogram[s.label] = histogram.get(s.label, 0) + 1
    return SampleStats(
        count=n,
        class_histogram=histogram,
        feature_mean=tuple(v / n for v in sums),
        feature_min=tuple(mins),
        feature_max=tuple(maxs),
    )


@dataclass(frozen=True)
class TaskRecord:
    """The KB unit of knowledge for one task."""

    key: str
    attributes: BucketedAttributes
    model: ModelArtifact
    spec: EstimatorSpec
    sample_stats: SampleStats
    relations: tuple[tuple[str, float], ...] = ()
    status: str = STATUS_TRAINED
    version: int = 1
    eval: EvalMetrics | None = None

    def __post_init__(self):
        if self.status not in _STATUSES:
            raise StoreError(f"invalid record status {self.status!r}")
        if self.version < 1:
            raise StoreError("record version must be >= 1")
        if self.status == STATUS_DEPLOYABLE and self.eval is None:
            raise StoreError("deployable records must carry eval metrics")
        if any(key == self.key for key, _ in self.relations):
            raise StoreError("relations must exclude the record's own key")
        if self.spec != self.model.spec:
            raise StoreError("record spec must match the model's spec")


@dataclass(frozen=True)
class SnapshotEntry:
    model: ModelArtifact
    attributes: BucketedAttributes


@dataclass(frozen=True)
class DeploySnapshot:
    """Immutable set of eval-passing task models pushed to edges."""

    snapshot_version: int
    schema_fingerprint: str | None
    tasks: dict[str, SnapshotEntry]
    fallback: ModelArtifact | None


# ---------------------------------------------------------------------------
# JSON codecs for store + snapshot payloads
# ---------------------------------------------------------------------------

def _attrs_to_json(attrs: BucketedAttributes) -> dict:
    return {"values": list(attrs.values), "bucket_counts": list(attrs.bucket_counts)}


def _attrs_from_json(doc: dict) -> BucketedAttributes:
    return BucketedAttributes(tuple(doc["values"]), tuple(doc["bucket_counts"]))


def _stats_to_json(stats: SampleStats) -> dict:
    return {
        "count": stats.count,
        "class_histogram": stats.class_histogram,
        "feature_mean": list(stats.feature_mean),
        "feature_min": list(stats.feature_min),
        "feature_max": list(stats.feature_max),
    }


def _stats_from_json(doc: dict) -> SampleStats:
    return SampleStats(
        count=doc["count"],
        class_histogram=doc["class_histogram"],
        feature_mean=tuple(doc["feature_mean"]),
        feature_min=tuple(doc["feature_min"]),
        feature_max=tuple(doc["feature_max"]),
    )


_metrics_to_json = metrics_to_json
_metrics_from_json = metrics_from_json


def _record_content_digest(record: TaskRecord) -> str:
    """Content hash of everything except the version (used for idempotent
    upserts: re-storing identical content must not bump versions)."""
    doc = {
        "key": record.key,
        "attributes": _attrs_to_json(record.attributes),
        "stats": _stats_to_json(record.sample_stats),
        "relations": [[k, s] for k, s in record.relations],
        "status": record.status,
        "eval": _metrics_to_json(record.eval),
        "model": serialize_model(record.model).decode("utf-8"),
    }
    return sha256(canonical_json_bytes(doc)).hexdigest()


def serialize_snapshot(snapshot: DeploySnapshot) -> bytes:
    """Canonical byte encoding of a deploy snapshot (the push payload)."""
    doc = {
        "format": 1,
        "snapshot_version": snapshot.snapshot_version,
        "schema_fingerprint": snapshot.schema_fingerprint,
        "tasks": {
            key: {
                "attributes": _attrs_to_json(entry.attributes),
                "model": json.loads(serialize_model(entry.model).decode("utf-8")),
            }
            for key, entry in snapshot.tasks.items()
        },
        "fallback": (
            json.loads(serialize_model(snapshot.fallback).decode("utf-8"))
            if snapshot.fallback is not None
            else None
        ),
    }
    return canonical_json_bytes(doc)


def deserialize_snapshot(data: bytes) -> DeploySnapshot:
    try:
        doc = json.loads(data.decode("utf-8"))
        tasks = {
            key: SnapshotEntry(
                model=deserialize_model(canonical_json_bytes(entry["model"])),
                attributes=_attrs_from_json(entry["attributes"]),
            )
            for key, entry in doc["tasks"].items()
        }
        fallback = None
        if doc["fallback"] is not None:
            fallback = deserialize_model(canonical_json_bytes(doc["fallback"]))
        return DeploySnapshot(
            snapshot_version=doc["snapshot_version"],
            schema_fingerprint=doc["schema_fingerprint"],
            tasks=tasks,
            fallback=fallback,
        )
    except SerializationError:
        raise
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise SerializationError(f"corrupt snapshot payload: {exc}") from exc


# ---------------------------------------------------------------------------
# Atomic file helpers (separated so tests can inject faults)
# ---------------------------------------------------------------------------

def _replace_file(src: Path, dst: Path) -> None:
    os.replace(src, dst)


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    _replace_file(tmp, path)


def _model_file_name(key: str, version: int) -> str:
    return f"{quote(key, safe='')}.{version}.bin"


def _fallback_file_name(revision: int) -> str:
    return f"_fallback.{revision}.bin"


class KnowledgeBase:
    """Versioned persistent index of task records plus the fallback model.

    Mutations are persisted before the in-memory state is updated, so an
    I/O failure never leaves memory ahead of disk. Single-writer: callers
    serialize mutations; snapshots are immutable values safe to share.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self.records: dict[str, TaskRecord] = {}
        self.kb_version = 0
        self.schema_fingerprint: str | None = None
        self.fallback: ModelArtifact | None = None
        self._fallback_rev = 0

    # -- opening ------------------------------------------------------------

    @classmethod
    def open(cls, path: str | Path) -> "KnowledgeBase":
        kb = cls(Path(path))
        kb.path.mkdir(parents=True, exist_ok=True)
        (kb.path / _MODELS_DIR).mkdir(exist_ok=True)
        index_path = kb.path / _INDEX_NAME
        if not index_path.exists():
            return kb

        raw = index_path.read_bytes()
        try:
            doc = json.loads(raw.decode("utf-8"))
            declared_crc = doc["crc32"]
            body = doc["body"]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorruptStoreError(f"corrupt store index {index_path}: {exc}") from exc
        actual_crc = zlib.crc32(canonical_json_bytes(body))
        if actual_crc != declared_crc:
            raise CorruptStoreError(
                f"corrupt store index {index_path}: checksum mismatch "
                f"(declared {declared_crc}, actual {actual_crc})"
            )

        kb.schema_fingerprint = body["schema_fingerprint"]
        kb.kb_version = body["kb_version"]
        for entry in body["tasks"]:
            model = kb._read_model_file(entry["model_file"], entry["crc32"])
            record = TaskRecord(
                key=entry["key"],
                attributes=_attrs_from_json(entry["attributes"]),
                model=model,
                spec=model.spec,
                sample_stats=_stats_from_json(entry["stats"]),
                relations=tuple((k, s) for k, s in entry["relations"]),
                status=entry["status"],
                version=entry["version"],
                eval=_metrics_from_json(entry["eval"]),
            )
            kb.records[record.key] = record
        if body["fallback"] is not None:
            kb.fallback = kb._read_model_file(
                body["fallback"]["model_file"], body["fallback"]["crc32"]
            )
            kb._fallback_rev = body["fallback"]["revision"]
        return kb

    def _read_model_file(self, name: str, expected_crc: int) -> ModelArtifact:
        path = self.path / _MODELS_DIR / name
        if not path.exists():
            raise CorruptStoreError(f"corrupt store: missing model file {path}")
        data = path.read_bytes()
        if zlib.crc32(data) != expected_crc:
            raise CorruptStoreError(f"corrupt store: checksum mismatch in {path}")
        return deserialize_model(data)

    # -- queries ------------------------------------------------------------

    def lookup(self, key: str) -> TaskRecord | None:
        """Exact-match retrieval; returns None when the key is unknown."""
        return self.records.get(key)

    def query_similar(
        self, attrs: BucketedAttributes, k: int
    ) -> list[tuple[TaskRecord, float]]:
        """Top-k records by attribute similarity to *attrs*, descending;
        ties break on the lexicographically smaller key. Zero-similarity
        records are never returned."""
        if k < 1:
            raise StoreError("k must be >= 1")
        scored = []
        for key in sorted(self.records):
            sim = task_similarity(attrs, self.records[key].attributes)
            if sim > 0.0:
                scored.append((-sim, key))
        scored.sort()
        return [(self.records[key], -neg) for neg, key in scored[:k]]

    def snapshot(self) -> DeploySnapshot:
        """Freeze the deployable records plus the fallback for push to edges."""
        deployable = {
            key: SnapshotEntry(model=rec.model, attributes=rec.attributes)
            for key, rec in self.records.items()
            if rec.status == STATUS_DEPLOYABLE
        }
        if not deployable and self.fallback is None:
            raise NothingDeployableError(
                "nothing deployable: no eval-passing task model and no fallback"
            )
        return DeploySnapshot(
            snapshot_version=self.kb_version,
            schema_fingerprint=self.schema_fingerprint,
            tasks=deployable,
            fallback=self.fallback,
        )

    def fingerprint(self) -> str:
        """Content hash of the full KB state (used for equality checks)."""
        doc = {
            "schema_fingerprint": self.schema_fingerprint,
            "kb_version": self.kb_version,
            "fallback": (
                sha256(serialize_model(self.fallback)).hexdigest()
                if self.fallback is not None
                else None
            ),
            "tasks": [
                {
                    "key": key,
                    "version": rec.version,
                    "status": rec.status,
                    "stats": _stats_to_json(rec.sample_stats),
                    "relations": [[k, s] for k, s in rec.relations],
                    "eval": _metrics_to_json(rec.eval),
                    "model": sha256(serialize_model(rec.model)).hexdigest(),
                }
                for key, rec in sorted(self.records.items())
            ],
        }
        return sha256(canonical_json_bytes(doc)).hexdigest()

    # -- mutations ----------------------------------------------------------

    def _check_schema(self, fingerprint: str) -> str | None:
        """Returns the fingerprint to pin when this mutation commits."""
        if self.schema_fingerprint is None:
            return fingerprint
        if self.schema_fingerprint != fingerprint:
            raise SchemaMismatchError(
                f"record schema {fingerprint} does not match KB schema "
                f"{self.schema_fingerprint}"
            )
        return self.schema_fingerprint

    def upsert_task(self, record: TaskRecord) -> int:
        """Insert or supersede a task record; returns the new kb_version.

        Re-upserting byte-identical content is a no-op (version unchanged).
        An existing key gets its record version incremented; the superseded
        model file stays on disk unreferenced.
        """
        pin = self._check_schema(record.model.schema_fingerprint)
        existing = self.records.get(record.key)
        if existing is not None:
            if _record_content_digest(existing) == _record_content_digest(record):
                return self.kb_version
            version = existing.version + 1
        else:
            version = 1
        stored = replace(record, version=version)
        new_records = dict(self.records)
        new_records[stored.key] = stored
        self._persist(new_records, self.fallback, self._fallback_rev, self.kb_version + 1, pin)
        self.records = new_records
        self.kb_version += 1
        self.schema_fingerprint = pin
        return self.kb_version

    def record_eval(self, key: str, status: str, metrics: EvalMetrics | None) -> int:
        """Apply an evaluation outcome to an existing record. Bumps the KB
        version but not the record version (which counts trainings)."""
        existing = self.records.get(key)
        if existing is None:
            raise StoreError(f"cannot record eval for unknown task {key!r}")
        updated = replace(existing, status=status, eval=metrics)
        new_records = dict(self.records)
        new_records[key] = updated
        self._persist(
            new_records, self.fallback, self._fallback_rev,
            self.kb_version + 1, self.schema_fingerprint,
        )
        self.records = new_records
        self.kb_version += 1
        return self.kb_version

    def set_fallback(self, model: ModelArtifact) -> int:
        """Replace the unknown-task fallback model; returns the new kb_version."""
        pin = self._check_schema(model.schema_fingerprint)
        revision = self._fallback_rev + 1
        self._persist(self.records, model, revision, self.kb_version + 1, pin)
        self.fallback = model
        self._fallback_rev = revision
        self.kb_version += 1
        self.schema_fingerprint = pin
        return self.kb_version

    def save(self) -> None:
        """Rewrite the store from the current in-memory state."""
        self._persist(
            self.records, self.fallback, self._fallback_rev,
            self.kb_version, self.schema_fingerprint,
        )

    # -- persistence --------------------------------------------------------

    def _persist(
        self,
        records: dict[str, TaskRecord],
        fallback: ModelArtifact | None,
        fallback_rev: int,
        kb_version: int,
        schema_fingerprint: str | None,
    ) -> None:
        models_dir = self.path / _MODELS_DIR
        models_dir.mkdir(parents=True, exist_ok=True)

        tasks = []
        for key, rec in sorted(records.items()):
            data = serialize_model(rec.model)
            name = _model_file_name(key, rec.version)
            target = models_dir / name
            # a crashed earlier mutation may have left a stale file under
            # this name; content must match or the index checksum would lie
            if not target.exists() or target.read_bytes() != data:
                _atomic_write_bytes(target, data)
            tasks.append(
                {
                    "key": key,
                    "version": rec.version,
                    "status": rec.status,
                    "attributes": _attrs_to_json(rec.attributes),
                    "stats": _stats_to_json(rec.sample_stats),
                    "relations": [[k, s] for k, s in rec.relations],
                    "eval": _metrics_to_json(rec.eval),
                    "model_file": name,
                    "crc32": zlib.crc32(data),
                }
            )

        fallback_entry = None
        if fallback is not None:
            data = serialize_model(fallback)
            name = _fallback_file_name(fallback_rev)
            target = models_dir / name
            if not target.exists() or target.read_bytes() != data:
                _atomic_write_bytes(target, data)
            fallback_entry = {
                "model_file": name,
                "crc32": zlib.crc32(data),
                "revision": fallback_rev,
            }

        body = {
            "schema_fingerprint": schema_fingerprint,
            "kb_version": kb_version,
            "fallback": fallback_entry,
            "tasks": tasks,
        }
        manifest = {"format": 1, "crc32": zlib.crc32(canonical_json_bytes(body)), "body": body}
        _atomic_write_bytes(self.path / _INDEX_NAME, canonical_json_bytes(manifest))


def kb_open(path: str | Path) -> KnowledgeBase:
    """Open (or create) a knowledge base stored in *path*."""
    return KnowledgeBase.open(path)
