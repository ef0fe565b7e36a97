"""Shared builders for the test suite."""

from __future__ import annotations

import random

import pytest

from edgelearn.data import AttributeKind, Dataset, DatasetSchema, Sample
from edgelearn.tasks import BucketingConfig


def city_schema(classes: tuple[str, ...] = ("a", "b")) -> DatasetSchema:
    """One numeric feature, one categorical attribute."""
    return DatasetSchema(
        feature_columns=("x",),
        label_column="y",
        label_classes=classes,
        attribute_columns=("city",),
        attribute_kinds=(AttributeKind("categorical"),),
    )


def banded_schema(edges: tuple[float, ...] = (20.0, 30.0)) -> DatasetSchema:
    """One numeric feature, one categorical plus one bucketed numeric attribute."""
    return DatasetSchema(
        feature_columns=("x",),
        label_column="y",
        label_classes=("a", "b"),
        attribute_columns=("city", "band"),
        attribute_kinds=(AttributeKind("categorical"), AttributeKind("numeric", edges)),
    )


def make_samples(rows) -> tuple[Sample, ...]:
    """rows: iterable of (features tuple, attrs tuple, label)."""
    return tuple(Sample(tuple(float(v) for v in f), tuple(a), y) for f, a, y in rows)


def city_dataset(rows, classes=("a", "b")) -> Dataset:
    """rows: iterable of (x, city, label)."""
    schema = city_schema(classes)
    return Dataset(
        schema,
        make_samples([((x,), (city,), y) for x, city, y in rows]),
    )


def random_city_dataset(rng: random.Random, n: int, cities, classes=("a", "b")) -> Dataset:
    rows = [
        (rng.uniform(0, 10), rng.choice(cities), rng.choice(classes))
        for _ in range(n)
    ]
    return city_dataset(rows, classes)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


def default_bucketing(schema: DatasetSchema) -> BucketingConfig:
    return BucketingConfig.from_schema(schema)
