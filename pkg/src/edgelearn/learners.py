"""Pluggable learners: estimator specs, model artifacts, metrics, serialization.

Built-in kinds are ``majority`` (constant most-frequent-class model),
``logistic`` (multinomial logistic regression, full-batch gradient descent
with a monotone-loss safeguard), and ``tree`` (gini decision tree for
classification, variance-reduction tree with mean leaves for regression).
All three are deterministic: fitting the same spec on the same data with
the same seed produces byte-identical serialized artifacts.

A new learner kind only has to provide ``fit`` and ``predict`` over a
JSON-serializable parameter payload; serialization then comes for free.
Register it with :func:`register_learner`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .data import Dataset, FeatureVector
from .errors import (
    DataError,
    LearnerError,
    SchemaMismatchError,
    SerializationError,
    UnknownLearnerError,
)

FORMAT_VERSION = 1

# Reserved keys the fit() wrapper injects into every parameter payload.
_META_KEYS = ("n_features", "classes")


def canonical_json_bytes(obj) -> bytes:
    """Stable byte encoding: sorted keys, no whitespace, exact float repr."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


# ---------------------------------------------------------------------------
# Hyperparameters and specs
# ---------------------------------------------------------------------------

def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


_HP_RULES = {
    "learning_rate": ("a real > 0", lambda v: _is_real(v) and v > 0),
    "epochs": ("an integer > 0", lambda v: _is_int(v) and v > 0),
    "max_depth": ("an integer > 0", lambda v: _is_int(v) and v > 0),
    "min_leaf": ("an integer > 0", lambda v: _is_int(v) and v > 0),
    "l2": ("a real >= 0", lambda v: _is_real(v) and v >= 0),
}


@dataclass(frozen=True)
class EstimatorSpec:
    """A learner kind plus its hyperparameters. Validated against the
    registered learner's declared hyperparameter set on construction."""

    kind: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        learner = get_learner(self.kind)
        for name, value in self.hyperparameters.items():
            if name not in learner.hyperparameter_defaults:
                raise LearnerError(
                    f"unknown hyperparameter {name!r} for learner kind {self.kind!r}"
                )
            rule = _HP_RULES.get(name)
            if rule is not None:
                desc, check = rule
                if not check(value):
                    raise LearnerError(f"hyperparameter {name!r} must be {desc}, got {value!r}")

    def resolved(self) -> dict:
        """Hyperparameters with the learner's defaults filled in."""
        merged = dict(get_learner(self.kind).hyperparameter_defaults)
        merged.update(self.hyperparameters)
        return merged


@dataclass(frozen=True)
class TrainingSummary:
    """What a model was fit on: sample count and class histogram."""

    count: int
    class_histogram: dict

    def __post_init__(self):
        if self.class_histogram and sum(self.class_histogram.values()) != self.count:
            raise LearnerError("class histogram does not sum to the sample count")


@dataclass(frozen=True)
class ModelArtifact:
    """A trained, self-contained model: spec, parameter payload, provenance."""

    spec: EstimatorSpec
    parameters: dict
    trained_on: TrainingSummary
    seed: int
    schema_fingerprint: str

    @property
    def classes(self) -> tuple[str, ...] | None:
        classes = self.parameters.get("classes")
        return tuple(classes) if classes is not None else None

    @property
    def is_classification(self) -> bool:
        return self.parameters.get("classes") is not None


@dataclass(frozen=True)
class EvalMetrics:
    """Classification metrics: accuracy plus a full confusion matrix.

    ``counts[i][j]`` is the number of samples with true class i predicted
    as class j, in ``classes`` order.
    """

    accuracy: float
    classes: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise LearnerError("metrics need at least one sample")
        if sum(sum(row) for row in self.counts) != self.n:
            raise LearnerError("confusion matrix entries must sum to n")
        if self.accuracy != self.correct / self.n:
            raise LearnerError("accuracy must equal trace/n")

    @property
    def correct(self) -> int:
        return sum(self.counts[i][i] for i in range(len(self.classes)))

    @classmethod
    def from_counts(cls, classes: tuple[str, ...], counts: tuple[tuple[int, ...], ...]) -> "EvalMetrics":
        n = sum(sum(row) for row in counts)
        trace = sum(counts[i][i] for i in range(len(classes)))
        return cls(accuracy=trace / n, classes=classes, counts=counts, n=n)


# ---------------------------------------------------------------------------
# Learner registry
# ---------------------------------------------------------------------------

class Learner:
    """Base plugin contract. Subclasses implement fit/predict over a
    JSON-serializable parameter dict; predict_proba is optional."""

    kind: str = ""
    task_kinds: frozenset = frozenset({"classification"})
    hyperparameter_defaults: dict = {}

    def fit(self, spec: EstimatorSpec, train: Dataset, seed: int) -> dict:
        raise NotImplementedError

    def predict(self, params: dict, features: FeatureVector):
        raise NotImplementedError

    def predict_proba(self, params: dict, features: FeatureVector) -> tuple[float, ...]:
        raise LearnerError(f"learner kind {self.kind!r} does not expose probabilities")


_REGISTRY: dict[str, Learner] = {}


def register_learner(learner: Learner) -> None:
    if not learner.kind:
        raise LearnerError("learner must declare a kind identifier")
    _REGISTRY[learner.kind] = learner


def get_learner(kind: str) -> Learner:
    try:
        return _REGISTRY[kind]
    except KeyError:
        raise LearnerError(f"unknown learner kind {kind!r}") from None


def registered_kinds() -> list[str]:
    return sorted(_REGISTRY)


# ---------------------------------------------------------------------------
# Built-in learners
# ---------------------------------------------------------------------------

class MajorityLearner(Learner):
    """Constant model predicting the most frequent training class
    (ties resolve to the lowest class index)."""

    kind = "majority"
    task_kinds = frozenset({"classification"})
    hyperparameter_defaults: dict = {}

    def fit(self, spec, train, seed):
        classes = train.schema.label_classes
        counts = [0] * len(classes)
        for s in train.samples:
            counts[classes.index(s.label)] += 1
        best = max(range(len(classes)), key=lambda i: (counts[i], -i))
        return {"label_index": best}

    def predict(self, params, features):
        return params["classes"][params["label_index"]]

    def predict_proba(self, params, features):
        proba = [0.0] * len(params["classes"])
        proba[params["label_index"]] = 1.0
        return tuple(proba)


def _softmax(scores: list[float]) -> list[float]:
    m = max(scores)
    exps = [math.exp(s - m) for s in scores]
    total = sum(exps)
    return [e / total for e in exps]


class LogisticLearner(Learner):
    """Multinomial logistic regression trained by full-batch gradient descent
    from all-zero weights.

    The loss is mean cross-entropy plus 0.5 * l2 * ||W||^2 (bias
    unregularized). Steps that would increase the loss halve the learning
    rate and retry, so the recorded per-epoch loss is non-increasing by
    construction.
    """

    kind = "logistic"
    task_kinds = frozenset({"classification"})
    hyperparameter_defaults = {"learning_rate": 0.1, "epochs": 200, "l2": 0.0}

    def fit(self, spec, train, seed):
        hp = spec.resolved()
        classes = train.schema.label_classes
        k = len(classes)
        f = train.schema.n_features
        x = [list(s.features) for s in train.samples]
        y = [classes.index(s.label) for s in train.samples]
        n = len(x)

        weights = [[0.0] * f for _ in range(k)]
        bias = [0.0] * k
        l2 = hp["l2"]
        lr = hp["learning_rate"]

        def loss(w, b):
            total = 0.0
            for xi, yi in zip(x, y):
                scores = [sum(w[c][j] * xi[j] for j in range(f)) + b[c] for c in range(k)]
                proba = _softmax(scores)
                total -= math.log(max(proba[yi], 1e-300))
            reg = 0.5 * l2 * sum(w[c][j] ** 2 for c in range(k) for j in range(f))
            return total / n + reg

        def gradient(w, b):
            gw = [[l2 * w[c][j] for j in range(f)] for c in range(k)]
            gb = [0.0] * k
            for xi, yi in zip(x, y):
                scores = [sum(w[c][j] * xi[j] for j in range(f)) + b[c] for c in range(k)]
                proba = _softmax(scores)
                for c in range(k):
                    delta = (proba[c] - (1.0 if c == yi else 0.0)) / n
                    gb[c] += delta
                    for j in range(f):
                        gw[c][j] += delta * xi[j]
            return gw, gb

        current = loss(weights, bias)
        history = [current]
        for _ in range(hp["epochs"]):
            gw, gb = gradient(weights, bias)
            while True:
                cand_w = [[weights[c][j] - lr * gw[c][j] for j in range(f)] for c in range(k)]
                cand_b = [bias[c] - lr * gb[c] for c in range(k)]
                cand = loss(cand_w, cand_b)
                if cand <= current + 1e-12:
                    weights, bias, current = cand_w, cand_b, cand
                    break
                lr *= 0.5
                if lr < 1e-18:
                    break  # step too small to help; keep current weights
            history.append(current)

        return {"weights": weights, "bias": bias, "loss_history": history}

    def _scores(self, params, features):
        weights = params["weights"]
        bias = params["bias"]
        return [
            sum(wc[j] * features[j] for j in range(len(features))) + bc
            for wc, bc in zip(weights, bias)
        ]

    def predict(self, params, features):
        proba = _softmax(self._scores(params, features))
        best = max(range(len(proba)), key=lambda i: (proba[i], -i))
        return params["classes"][best]

    def predict_proba(self, params, features):
        return tuple(_softmax(self._scores(params, features)))


class TreeLearner(Learner):
    """Binary decision tree. Classification splits minimize weighted gini
    impurity with exact integer arithmetic (so exhaustive-search oracles
    agree bit-for-bit); regression splits minimize summed squared error with
    mean-valued leaves. Candidate thresholds are midpoints between
    consecutive distinct feature values; ties resolve to the lowest feature
    index, then the lowest threshold.
    """

    kind = "tree"
    task_kinds = frozenset({"classification", "regression"})
    hyperparameter_defaults = {"max_depth": 4, "min_leaf": 1}

    def fit(self, spec, train, seed):
        hp = spec.resolved()
        schema = train.schema
        if schema.is_classification:
            labels = [schema.class_index(s.label) for s in train.samples]
            tree = self._build_classification(
                train, labels, list(range(len(train))), hp["max_depth"], hp["min_leaf"]
            )
        else:
            tree = self._build_regression(
                train, list(range(len(train))), hp["max_depth"], hp["min_leaf"]
            )
        return {"tree": tree}

    # -- classification ----------------------------------------------------

    @staticmethod
    def _class_counts(labels, indices, k):
        counts = [0] * k
        for i in indices:
            counts[labels[i]] += 1
        return counts

    @staticmethod
    def _node_impurity(counts) -> tuple[int, int]:
        # n * gini as an exact rational (numerator, denominator)
        n = sum(counts)
        return n * n - sum(c * c for c in counts), n

    @classmethod
    def best_gini_split(cls, dataset: Dataset, labels, indices, min_leaf: int):
        """Best (feature, threshold) by weighted gini over all midpoint
        candidates, or None when no split strictly improves on the node.

        Returns ``(feature, threshold, impurity_numerator, impurity_denominator)``
        where the impurity rational is sum over sides of ``m * gini(side)``,
        expressed over the common denominator ``n_left * n_right``.
        """
        k = len(dataset.schema.label_classes)
        n = len(indices)
        parent_num, parent_den = cls._node_impurity(cls._class_counts(labels, indices, k))
        best = None  # (num, den, feature, threshold)
        for j in range(dataset.schema.n_features):
            order = sorted(indices, key=lambda i: dataset.samples[i].features[j])
            left = [0] * k
            right = cls._class_counts(labels, order, k)
            for pos in range(n - 1):
                i = order[pos]
                left[labels[i]] += 1
                right[labels[i]] -= 1
                v1 = dataset.samples[i].features[j]
                v2 = dataset.samples[order[pos + 1]].features[j]
                if v1 == v2:
                    continue
                n_left = pos + 1
                n_right = n - n_left
                if n_left < min_leaf or n_right < min_leaf:
                    continue
                num = (n_left * n_left - sum(c * c for c in left)) * n_right + (
                    n_right * n_right - sum(c * c for c in right)
                ) * n_left
                den = n_left * n_right
                if best is None or num * best[1] < best[0] * den:
                    best = (num, den, j, (v1 + v2) / 2.0)
        if best is None:
            return None
        num, den, j, threshold = best
        # keep the node a leaf unless the split strictly improves impurity
        if num * parent_den >= parent_num * den:
            return None
        return j, threshold, num, den

    def _build_classification(self, dataset, labels, indices, depth, min_leaf):
        k = len(dataset.schema.label_classes)
        counts = self._class_counts(labels, indices, k)
        leaf = {
            "kind": "leaf",
            "counts": counts,
            "label_index": max(range(k), key=lambda i: (counts[i], -i)),
        }
        if depth == 0 or len(indices) < 2 * min_leaf or counts.count(0) == k - 1:
            return leaf
        split = self.best_gini_split(dataset, labels, indices, min_leaf)
        if split is None:
            return leaf
        j, threshold, _, _ = split
        left = [i for i in indices if dataset.samples[i].features[j] < threshold]
        right = [i for i in indices if dataset.samples[i].features[j] >= threshold]
        return {
            "kind": "split",
            "feature": j,
            "threshold": threshold,
            "left": self._build_classification(dataset, labels, left, depth - 1, min_leaf),
            "right": self._build_classification(dataset, labels, right, depth - 1, min_leaf),
        }

    # -- regression ---------------------------------------------------------

    def _build_regression(self, dataset, indices, depth, min_leaf):
        ys = [float(dataset.samples[i].label) for i in indices]
        n = len(ys)
        mean = sum(ys) / n
        leaf = {"kind": "leaf", "mean": mean, "n": n}
        if depth == 0 or n < 2 * min_leaf:
            return leaf
        parent_sse = sum((y - mean) ** 2 for y in ys)
        best = None  # (sse, feature, threshold)
        for j in range(dataset.schema.n_features):
            order = sorted(indices, key=lambda i: dataset.samples[i].features[j])
            total = sum(float(dataset.samples[i].label) for i in order)
            total_sq = sum(float(dataset.samples[i].label) ** 2 for i in order)
            left_sum = 0.0
            left_sq = 0.0
            for pos in range(n - 1):
                i = order[pos]
                y = float(dataset.samples[i].label)
                left_sum += y
                left_sq += y * y
                v1 = dataset.samples[i].features[j]
                v2 = dataset.samples[order[pos + 1]].features[j]
                if v1 == v2:
                    continue
                n_left = pos + 1
                n_right = n - n_left
                if n_left < min_leaf or n_right < min_leaf:
                    continue
                right_sum = total - left_sum
                right_sq = total_sq - left_sq
                sse = (left_sq - left_sum * left_sum / n_left) + (
                    right_sq - right_sum * right_sum / n_right
                )
                if best is None or sse < best[0]:
                    best = (sse, j, (v1 + v2) / 2.0)
        if best is None or best[0] >= parent_sse:
            return leaf
        _, j, threshold = best
        left = [i for i in indices if dataset.samples[i].features[j] < threshold]
        right = [i for i in indices if dataset.samples[i].features[j] >= threshold]
        return {
            "kind": "split",
            "feature": j,
            "threshold": threshold,
            "left": self._build_regression(dataset, left, depth - 1, min_leaf),
            "right": self._build_regression(dataset, right, depth - 1, min_leaf),
        }

    # -- inference ----------------------------------------------------------

    @staticmethod
    def _walk(node, features):
        while node["kind"] == "split":
            node = node["left"] if features[node["feature"]] < node["threshold"] else node["right"]
        return node

    def predict(self, params, features):
        node = self._walk(params["tree"], features)
        classes = params["classes"]
        if classes is None:
            return node["mean"]
        return classes[node["label_index"]]

    def predict_proba(self, params, features):
        node = self._walk(params["tree"], features)
        counts = node["counts"]
        total = sum(counts)
        return tuple(c / total for c in counts)


register_learner(MajorityLearner())
register_learner(LogisticLearner())
register_learner(TreeLearner())


# ---------------------------------------------------------------------------
# Top-level operations
# ---------------------------------------------------------------------------

def fit(spec: EstimatorSpec, train: Dataset, seed: int) -> ModelArtifact:
    """Train a model. Deterministic given (spec, train, seed)."""
    learner = get_learner(spec.kind)
    if len(train) == 0:
        raise LearnerError("cannot fit on an empty dataset")
    train.require_labeled()
    schema = train.schema
    label_kind = "classification" if schema.is_classification else "regression"
    if label_kind not in learner.task_kinds:
        raise LearnerError(f"learner kind {spec.kind!r} does not support {label_kind}")

    params = learner.fit(spec, train, seed)
    for key in _META_KEYS:
        if key in params:
            raise LearnerError(f"learner parameters may not use reserved key {key!r}")
    params = {
        "n_features": schema.n_features,
        "classes": list(schema.label_classes) if schema.is_classification else None,
        **params,
    }

    histogram: dict = {}
    if schema.is_classification:
        histogram = {c: 0 for c in schema.label_classes}
        for s in train.samples:
            histogram[s.label] += 1
    return ModelArtifact(
        spec=spec,
        parameters=params,
        trained_on=TrainingSummary(count=len(train), class_histogram=histogram),
        seed=seed,
        schema_fingerprint=schema.fingerprint(),
    )


def predict(model: ModelArtifact, features: FeatureVector):
    """Predict one sample. Classification returns a declared class name."""
    if len(features) != model.parameters["n_features"]:
        raise DataError(
            f"expected {model.parameters['n_features']} features, got {len(features)}"
        )
    return get_learner(model.spec.kind).predict(model.parameters, features)


def predict_proba(model: ModelArtifact, features: FeatureVector) -> tuple[float, ...]:
    """Class distribution for one sample; argmax agrees with predict()."""
    if not model.is_classification:
        raise LearnerError("predict_proba requires a classification model")
    if len(features) != model.parameters["n_features"]:
        raise DataError(
            f"expected {model.parameters['n_features']} features, got {len(features)}"
        )
    return get_learner(model.spec.kind).predict_proba(model.parameters, features)


def evaluate(model: ModelArtifact, test: Dataset) -> EvalMetrics:
    """Confusion matrix and accuracy of a classification model on a labeled set."""
    if len(test) == 0:
        raise LearnerError("cannot evaluate on an empty dataset")
    test.require_labeled()
    if not model.is_classification:
        raise LearnerError("evaluate requires a classification model")
    if test.schema.fingerprint() != model.schema_fingerprint:
        raise SchemaMismatchError("test set schema does not match the model")
    classes = model.classes
    index = {c: i for i, c in enumerate(classes)}
    counts = [[0] * len(classes) for _ in classes]
    for s in test.samples:
        counts[index[s.label]][index[predict(model, s.features)]] += 1
    return EvalMetrics.from_counts(classes, tuple(tuple(row) for row in counts))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def metrics_to_json(metrics: EvalMetrics | None) -> dict | None:
    if metrics is None:
        return None
    return {
        "accuracy": metrics.accuracy,
        "classes": list(metrics.classes),
        "counts": [list(row) for row in metrics.counts],
        "n": metrics.n,
    }


def metrics_from_json(doc: dict | None) -> EvalMetrics | None:
    if doc is None:
        return None
    return EvalMetrics(
        accuracy=doc["accuracy"],
        classes=tuple(doc["classes"]),
        counts=tuple(tuple(row) for row in doc["counts"]),
        n=doc["n"],
    )


def serialize_model(model: ModelArtifact) -> bytes:
    """Canonical, versioned byte encoding of a model artifact."""
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": model.spec.kind,
        "schema_fingerprint": model.schema_fingerprint,
        "seed": model.seed,
        "hyperparameters": model.spec.hyperparameters,
        "trained_on": {
            "count": model.trained_on.count,
            "class_histogram": model.trained_on.class_histogram,
        },
        "parameters": model.parameters,
    }
    return canonical_json_bytes(payload)


def deserialize_model(data: bytes) -> ModelArtifact:
    """Inverse of :func:`serialize_model`; exact parameter round-trip."""
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SerializationError(f"corrupt model payload: {exc}") from exc
    if not isinstance(payload, dict):
        raise SerializationError("corrupt model payload: not an object")
    missing = {
        "format_version", "kind", "schema_fingerprint", "seed",
        "hyperparameters", "trained_on", "parameters",
    } - payload.keys()
    if missing:
        raise SerializationError(f"corrupt model payload: missing {sorted(missing)}")
    if payload["format_version"] != FORMAT_VERSION:
        raise SerializationError(
            f"unsupported model format version {payload['format_version']!r}"
        )
    kind = payload["kind"]
    if kind not in _REGISTRY:
        raise UnknownLearnerError(f"unknown learner kind {kind!r} in model payload")
    try:
        spec = EstimatorSpec(kind=kind, hyperparameters=payload["hyperparameters"])
        trained = TrainingSummary(
            count=payload["trained_on"]["count"],
            class_histogram=payload["trained_on"]["class_histogram"],
        )
        return ModelArtifact(
            spec=spec,
            parameters=payload["parameters"],
            trained_on=trained,
            seed=payload["seed"],
            schema_fingerprint=payload["schema_fingerprint"],
        )
    except (KeyError, TypeError, LearnerError) as exc:
        raise SerializationError(f"corrupt model payload: {exc}") from exc
