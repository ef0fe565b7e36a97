"""Task mining over heterogeneous datasets.

A *task* is identified by the tuple of bucketed attribute values of its
samples: categorical attributes pass through, numeric attributes map to a
bucket index against a configured edge list. Mining groups a dataset into
one sub-dataset per task key; attribute-based similarity relates tasks to
each other; sample transfer tops up small tasks from their nearest
neighbours without touching the learner contract.
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import NUMERIC, Dataset, DatasetSchema, TaskAttrValues
from .errors import DataError, SchemaError, SchemaMismatchError

KEY_SEPARATOR = "|"
_ESCAPE = "\\"


@dataclass(frozen=True)
class BucketingConfig:
    """Per-attribute-column bucket edges; ``None`` marks a categorical column.

    A numeric column with m edges has m+1 buckets. An empty edge tuple is a
    single bucket (every value maps to bucket 0).
    """

    edges: tuple[tuple[float, ...] | None, ...]

    def __post_init__(self):
        for col_edges in self.edges:
            if col_edges is None:
                continue
            if any(a >= b for a, b in zip(col_edges, col_edges[1:])):
                raise SchemaError(f"bucket edges {list(col_edges)} are not strictly increasing")

    @classmethod
    def from_schema(cls, schema: DatasetSchema) -> "BucketingConfig":
        """Default bucketing: edges declared on the schema's numeric attributes."""
        return cls(
            tuple(
                kind.edges if kind.kind == NUMERIC else None
                for kind in schema.attribute_kinds
            )
        )

    def bucket_count(self, column: int) -> int:
        col_edges = self.edges[column]
        if col_edges is None:
            return 0
        return len(col_edges) + 1


@dataclass(frozen=True)
class BucketedAttributes:
    """Attribute tuple after bucketing: strings stay, numerics become bucket
    indices. ``bucket_counts`` carries each numeric column's bucket count
    (0 for categorical) so similarity is computable without the config."""

    values: tuple[str | int, ...]
    bucket_counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.values) != len(self.bucket_counts):
            raise SchemaError("values and bucket_counts must be parallel")


def bucket_attributes(attrs: TaskAttrValues, bucketing: BucketingConfig) -> BucketedAttributes:
    """Map raw attribute values to their bucketed form.

    Numeric value v with edges e becomes ``count(e_i <= v)``; edges are the
    left-inclusive boundaries of the next bucket.
    """
    if len(attrs) != len(bucketing.edges):
        raise SchemaMismatchError(
            f"expected {len(bucketing.edges)} attributes, got {len(attrs)}"
        )
    values: list[str | int] = []
    counts: list[int] = []
    for v, col_edges in zip(attrs, bucketing.edges):
        if col_edges is None:
            if not isinstance(v, str):
                raise DataError(f"categorical attribute needs a string, got {v!r}")
            values.append(v)
            counts.append(0)
        else:
            if isinstance(v, str):
                raise DataError(f"numeric attribute needs a number, got {v!r}")
            values.append(sum(1 for e in col_edges if e <= v))
            counts.append(len(col_edges) + 1)
    return BucketedAttributes(tuple(values), tuple(counts))


def _escape(value: str) -> str:
    return value.replace(_ESCAPE, _ESCAPE + _ESCAPE).replace(KEY_SEPARATOR, _ESCAPE + KEY_SEPARATOR)


def task_key(bucketed: BucketedAttributes) -> str:
    """Canonical key string for a bucketed attribute tuple (injective for a
    fixed schema and bucketing: separator occurrences are escaped)."""
    parts = []
    for v in bucketed.values:
        parts.append(_escape(v) if isinstance(v, str) else str(v))
    return KEY_SEPARATOR.join(parts)


def task_similarity(a: BucketedAttributes, b: BucketedAttributes) -> float:
    """Mean per-column similarity between two bucketed attribute tuples.

    Categorical columns score 1 on equality, else 0. Numeric columns with B
    buckets score ``max(0, 1 - |i-j|/(B-1))`` (B=1 scores 1). Symmetric,
    bounded in [0,1], and 1 exactly on equal tuples. A zero-attribute schema
    scores 1 (single implicit task).
    """
    if len(a.values) != len(b.values) or a.bucket_counts != b.bucket_counts:
        raise SchemaMismatchError("bucketed attributes come from different schemas")
    if not a.values:
        return 1.0
    total = 0.0
    for va, vb, count in zip(a.values, b.values, a.bucket_counts):
        if count == 0:
            if type(va) is not type(vb):
                raise SchemaMismatchError("mixed categorical/numeric column")
            total += 1.0 if va == vb else 0.0
        else:
            if count == 1:
                total += 1.0
            else:
                total += max(0.0, 1.0 - abs(int(va) - int(vb)) / (count - 1))
    return total / len(a.values)


@dataclass(frozen=True)
class TaskPartition:
    """Disjoint, exhaustive grouping of a dataset into per-task sub-datasets."""

    parts: dict[str, Dataset]
    attributes: dict[str, BucketedAttributes]

    def __len__(self) -> int:
        return len(self.parts)

    @property
    def keys(self) -> list[str]:
        return sorted(self.parts)


def mine_tasks(dataset: Dataset, bucketing: BucketingConfig) -> TaskPartition:
    """Group a fully labeled dataset into tasks by bucketed attribute key."""
    if len(dataset) == 0:
        raise DataError("cannot mine tasks from an empty dataset")
    dataset.require_labeled()
    groups: dict[str, list] = {}
    attrs_by_key: dict[str, BucketedAttributes] = {}
    for sample in dataset.samples:
        bucketed = bucket_attributes(sample.attributes, bucketing)
        key = task_key(bucketed)
        if key not in groups:
            groups[key] = []
            attrs_by_key[key] = bucketed
        groups[key].append(sample)
    parts = {key: Dataset(dataset.schema, tuple(rows)) for key, rows in groups.items()}
    return TaskPartition(parts, attrs_by_key)


@dataclass(frozen=True)
class TransferResult:
    """Outcome of sample transfer: the (possibly augmented) training set,
    which donors contributed how many samples, and a small-task flag set
    when the target stays below the threshold after borrowing."""

    dataset: Dataset
    provenance: tuple[tuple[str, int], ...] = ()
    small_task: bool = False


def sample_transfer(
    target_key: str,
    partition: TaskPartition,
    min_samples: int,
    cap: int,
) -> TransferResult:
    """Top up a small task with samples borrowed from similar tasks.

    Donors are visited whole-task in descending similarity (ties by key);
    tasks with similarity 0 never donate. ``cap`` bounds the total borrowed
    sample count; a donor that would exceed it is skipped along with all
    later donors (borrowing is whole-task only).
    """
    if target_key not in partition.parts:
        raise DataError(f"unknown task key {target_key!r}")
    target = partition.parts[target_key]
    if len(target) >= min_samples:
        return TransferResult(target)

    target_attrs = partition.attributes[target_key]
    donors = []
    for key in sorted(partition.parts):
        if key == target_key:
            continue
        sim = task_similarity(target_attrs, partition.attributes[key])
        if sim > 0.0:
            donors.append((-sim, key))
    donors.sort()

    samples = list(target.samples)
    provenance: list[tuple[str, int]] = []
    borrowed = 0
    for _, key in donors:
        if len(samples) >= min_samples:
            break
        part = partition.parts[key]
        if borrowed + len(part) > cap:
            break
        samples.extend(part.samples)
        borrowed += len(part)
        provenance.append((key, len(part)))

    return TransferResult(
        Dataset(target.schema, tuple(samples)),
        tuple(provenance),
        small_task=len(samples) < min_samples,
    )
