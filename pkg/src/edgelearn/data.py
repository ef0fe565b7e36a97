"""Tabular data model: schemas, samples, datasets, CSV ingestion.

A dataset row carries three things: a numeric feature vector (model input),
an optional label, and a tuple of task attributes (the situational context
that later identifies which task the row belongs to). Schemas pin column
names, the label kind, and per-attribute kinds. All objects here are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path

from .errors import DataError, SchemaError

AttrValue = str | float
FeatureVector = tuple[float, ...]
TaskAttrValues = tuple[AttrValue, ...]

CATEGORICAL = "categorical"
NUMERIC = "numeric"


def _is_finite_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


@dataclass(frozen=True)
class AttributeKind:
    """Kind of one attribute column: categorical, or numeric with bucket edges."""

    kind: str
    edges: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERIC):
            raise SchemaError(f"unknown attribute kind {self.kind!r}")
        if self.kind == CATEGORICAL and self.edges:
            raise SchemaError("categorical attribute cannot declare bucket edges")
        for e in self.edges:
            if not _is_finite_number(e):
                raise SchemaError(f"bucket edge {e!r} is not a finite number")
        if any(a >= b for a, b in zip(self.edges, self.edges[1:])):
            raise SchemaError(f"bucket edges {list(self.edges)} are not strictly increasing")


@dataclass(frozen=True)
class DatasetSchema:
    """Column layout of a dataset.

    ``label_classes`` is the ordered class list for classification, or None
    for regression. ``attribute_kinds`` is parallel to ``attribute_columns``.
    """

    feature_columns: tuple[str, ...]
    label_column: str
    label_classes: tuple[str, ...] | None
    attribute_columns: tuple[str, ...] = ()
    attribute_kinds: tuple[AttributeKind, ...] = ()

    def __post_init__(self):
        names = list(self.feature_columns) + [self.label_column] + list(self.attribute_columns)
        seen = set()
        for name in names:
            if name in seen:
                raise SchemaError(f"duplicate column name {name!r}")
            seen.add(name)
        if not self.feature_columns:
            raise SchemaError("schema needs at least one feature column")
        if self.label_classes is not None:
            if len(self.label_classes) < 2:
                raise SchemaError(f"class list for {self.label_column!r} needs at least 2 classes")
            if len(set(self.label_classes)) != len(self.label_classes):
                raise SchemaError(f"duplicate class in label column {self.label_column!r}")
        if len(self.attribute_columns) != len(self.attribute_kinds):
            raise SchemaError("attribute_kinds must be parallel to attribute_columns")

    @property
    def is_classification(self) -> bool:
        return self.label_classes is not None

    @property
    def n_features(self) -> int:
        return len(self.feature_columns)

    @property
    def n_attributes(self) -> int:
        return len(self.attribute_columns)

    def fingerprint(self) -> str:
        """Stable hash over feature columns and label kind (incl. class list)."""
        if self.label_classes is None:
            label = "regression"
        else:
            label = "classification:" + ",".join(self.label_classes)
        text = "features=" + ",".join(self.feature_columns) + ";label=" + label
        return sha256(text.encode("utf-8")).hexdigest()[:16]

    def class_index(self, label: str) -> int:
        assert self.label_classes is not None
        return self.label_classes.index(label)

    def validate_sample(self, sample: "Sample") -> None:
        """Raise DataError unless *sample* conforms to this schema."""
        if len(sample.features) != self.n_features:
            raise DataError(
                f"expected {self.n_features} features, got {len(sample.features)}"
            )
        for v in sample.features:
            if not _is_finite_number(v):
                raise DataError(f"feature value {v!r} is not a finite number")
        if len(sample.attributes) != self.n_attributes:
            raise DataError(
                f"expected {self.n_attributes} attributes, got {len(sample.attributes)}"
            )
        for col, kind, v in zip(self.attribute_columns, self.attribute_kinds, sample.attributes):
            if kind.kind == CATEGORICAL:
                if not isinstance(v, str) or not v:
                    raise DataError(f"attribute {col!r} needs a non-empty string, got {v!r}")
            else:
                if not _is_finite_number(v):
                    raise DataError(f"attribute {col!r} needs a finite number, got {v!r}")
        if sample.label is not None:
            if self.is_classification:
                if sample.label not in self.label_classes:
                    raise DataError(f"unknown class label {sample.label!r}")
            elif not _is_finite_number(sample.label):
                raise DataError(f"regression label {sample.label!r} is not finite")


@dataclass(frozen=True)
class Sample:
    """One row: features, situational attributes, optional label."""

    features: FeatureVector
    attributes: TaskAttrValues = ()
    label: str | float | None = None


@dataclass(frozen=True)
class Dataset:
    """An immutable, schema-validated collection of samples."""

    schema: DatasetSchema
    samples: tuple[Sample, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for i, s in enumerate(self.samples):
            try:
                self.schema.validate_sample(s)
            except DataError as exc:
                raise DataError(f"sample {i}: {exc}") from exc

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def fully_labeled(self) -> bool:
        return all(s.label is not None for s in self.samples)

    def require_labeled(self) -> None:
        for i, s in enumerate(self.samples):
            if s.label is None:
                raise DataError(f"sample {i} has no label")


# ---------------------------------------------------------------------------
# Schema config parsing
# ---------------------------------------------------------------------------

def parse_schema(config_text: str) -> DatasetSchema:
    """Parse a JSON schema config into a validated :class:`DatasetSchema`.

    Expected keys::

        {"features": [...],
         "label": {"name": ..., "classes": [...]} | {"name": ..., "kind": "regression"},
         "attributes": [{"name": ..., "kind": "categorical"} |
                        {"name": ..., "kind": "numeric", "edges": [...]}]}
    """
    try:
        raw = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("schema config must be a JSON object")

    features = raw.get("features")
    if not isinstance(features, list) or not all(isinstance(f, str) for f in features):
        raise SchemaError("'features' must be a list of column names")

    label = raw.get("label")
    if not isinstance(label, dict) or "name" not in label:
        raise SchemaError("'label' must be an object with a 'name'")
    label_name = label["name"]
    if "classes" in label:
        classes = label["classes"]
        if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
            raise SchemaError(f"class list for {label_name!r} must be a list of strings")
        if not classes:
            raise SchemaError(f"empty class list for label column {label_name!r}")
        label_classes = tuple(classes)
    elif label.get("kind") == "regression":
        label_classes = None
    else:
        raise SchemaError(f"label {label_name!r} needs 'classes' or kind 'regression'")

    attr_names: list[str] = []
    attr_kinds: list[AttributeKind] = []
    for entry in raw.get("attributes", []):
        if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
            raise SchemaError("each attribute needs 'name' and 'kind'")
        name = entry["name"]
        kind = entry["kind"]
        if kind == CATEGORICAL:
            attr_kinds.append(AttributeKind(CATEGORICAL))
        elif kind == NUMERIC:
            edges = entry.get("edges", [])
            if not isinstance(edges, list):
                raise SchemaError(f"attribute {name!r}: 'edges' must be a list")
            try:
                attr_kinds.append(AttributeKind(NUMERIC, tuple(float(e) for e in edges)))
            except SchemaError as exc:
                raise SchemaError(f"attribute {name!r}: {exc}") from exc
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"attribute {name!r}: non-numeric bucket edge") from exc
        else:
            raise SchemaError(f"attribute {name!r}: unknown kind {kind!r}")
        attr_names.append(name)

    return DatasetSchema(
        feature_columns=tuple(features),
        label_column=label_name,
        label_classes=label_classes,
        attribute_columns=tuple(attr_names),
        attribute_kinds=tuple(attr_kinds),
    )


def schema_to_json(schema: DatasetSchema) -> str:
    """Inverse of :func:`parse_schema`."""
    label: dict = {"name": schema.label_column}
    if schema.is_classification:
        label["classes"] = list(schema.label_classes)
    else:
        label["kind"] = "regression"
    attrs = []
    for name, kind in zip(schema.attribute_columns, schema.attribute_kinds):
        entry: dict = {"name": name, "kind": kind.kind}
        if kind.kind == NUMERIC:
            entry["edges"] = list(kind.edges)
        attrs.append(entry)
    doc = {"features": list(schema.feature_columns), "label": label, "attributes": attrs}
    return json.dumps(doc, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv(path: str | Path, schema: DatasetSchema) -> Dataset:
    """Load a dataset from CSV. Column order comes from the header row.

    An empty label cell means the row is unlabeled. Row numbers in error
    messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        col_pos: dict[str, int] = {}
        for i, name in enumerate(header):
            if name not in col_pos:
                col_pos[name] = i
        declared = list(schema.feature_columns) + [schema.label_column] + list(schema.attribute_columns)
        for name in declared:
            if name not in col_pos:
                raise DataError(f"{path}: missing column {name!r}")

        samples: list[Sample] = []
        for row_num, row in enumerate(reader, start=1):
            def cell(name: str) -> str:
                pos = col_pos[name]
                if pos >= len(row):
                    raise DataError(f"{path}: row {row_num}: too few cells")
                return row[pos]

            features = []
            for name in schema.feature_columns:
                text = cell(name)
                try:
                    features.append(float(text))
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_num}: unparseable numeric cell {text!r} in {name!r}"
                    ) from None

            label_text = cell(schema.label_column)
            label: str | float | None
            if label_text == "":
                label = None
            elif schema.is_classification:
                if label_text not in schema.label_classes:
                    raise DataError(
                        f"{path}: row {row_num}: unknown class label {label_text!r}"
                    )
                label = label_text
            else:
                try:
                    label = float(label_text)
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_num}: unparseable numeric cell {label_text!r} "
                        f"in {schema.label_column!r}"
                    ) from None

            attrs: list[AttrValue] = []
            for name, kind in zip(schema.attribute_columns, schema.attribute_kinds):
                text = cell(name)
                if kind.kind == CATEGORICAL:
                    if not text:
                        raise DataError(
                            f"{path}: row {row_num}: empty categorical attribute {name!r}"
                        )
                    attrs.append(text)
                else:
                    try:
                        attrs.append(float(text))
                    except ValueError:
                        raise DataError(
                            f"{path}: row {row_num}: unparseable numeric cell {text!r} in {name!r}"
                        ) from None

            samples.append(Sample(tuple(features), tuple(attrs), label))

    return Dataset(schema, tuple(samples))


def _format_value(v: str | float | None) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return repr(float(v))  # repr round-trips doubles exactly


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset as CSV: features, then label, then attributes."""
    schema = dataset.schema
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            list(schema.feature_columns) + [schema.label_column] + list(schema.attribute_columns)
        )
        for s in dataset.samples:
            row = [_format_value(v) for v in s.features]
            row.append(_format_value(s.label))
            row.extend(_format_value(v) for v in s.attributes)
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def split_dataset(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministically partition a dataset; the first part gets
    round(fraction * n) samples (half-up). Sample order within each part
    follows the input order.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must be in (0,1), got {fraction}")
    n = len(dataset)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    k = int(fraction * n + 0.5)
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    first = sorted(indices[:k])
    second = sorted(indices[k:])
    return (
        Dataset(dataset.schema, tuple(dataset.samples[i] for i in first)),
        Dataset(dataset.schema, tuple(dataset.samples[i] for i in second)),
    )
