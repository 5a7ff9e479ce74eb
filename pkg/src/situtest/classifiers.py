"""The black-box prediction side of the audit.

Three small trainable classifiers (logistic regression, Gaussian/
categorical naive Bayes, k-nearest-neighbours) cover desk-scale
experiments without external ML dependencies; a lookup model serves
scripted probability tables, and an external-process model lets the
audit drive any classifier that speaks the CSV-in / probabilities-out
protocol.  All models expose the same capability: the probability of a
positive outcome for a record, batched or one at a time.
"""

from __future__ import annotations

import csv
import io
import json
import subprocess
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .causal_graph import AuditRoles
from .dataset import CATEGORICAL, CONTINUOUS, DataError, Dataset, Record

__all__ = [
    "TrainingError",
    "PredictionError",
    "ExternalModelError",
    "LogisticModel",
    "NaiveBayesModel",
    "KnnModel",
    "LookupModel",
    "ExternalModel",
    "train",
    "flip_protected",
    "external_predict",
]


class TrainingError(ValueError):
    """Unusable training inputs (degenerate labels, bad features)."""


class PredictionError(ValueError):
    """A record the model cannot score (missing feature, unseen level)."""


class ExternalModelError(PredictionError):
    """The external classifier process failed or broke the protocol."""


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


@dataclass(frozen=True)
class _FeatureCodec:
    """Turns named value columns into the numeric design matrix.

    Categorical features are one-hot expanded; binary and continuous pass
    through as single columns.
    """

    features: tuple[tuple[str, str, int], ...]  # (name, kind, n_levels)

    @classmethod
    def from_schema(cls, data: Dataset, features: Sequence[str]) -> "_FeatureCodec":
        specs = []
        for name in features:
            spec = data.schema.attribute(name)
            specs.append((name, spec.kind, len(spec.levels)))
        return cls(tuple(specs))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.features)

    @property
    def width(self) -> int:
        return sum(k if kind == CATEGORICAL else 1 for _, kind, k in self.features)

    def encode(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        parts = []
        n = None
        for name, kind, k in self.features:
            if name not in columns:
                raise PredictionError(f"missing feature {name!r}")
            col = np.asarray(columns[name])
            if n is None:
                n = len(col)
            if kind == CATEGORICAL:
                idx = col.astype(np.int64)
                if idx.min(initial=0) < 0 or idx.max(initial=0) >= k:
                    bad = int(np.argmax((idx < 0) | (idx >= k)))
                    raise PredictionError(
                        f"row {bad}: unseen categorical level {idx[bad]} for {name!r}"
                    )
                parts.append(np.eye(k)[idx])
            else:
                vals = col.astype(np.float64)
                if not np.isfinite(vals).all():
                    bad = int(np.argmax(~np.isfinite(vals)))
                    raise PredictionError(f"row {bad}: non-finite value for {name!r}")
                parts.append(vals[:, None])
        return np.hstack(parts)


class _Model:
    """Shared single-record / batch plumbing for all classifier kinds."""

    feature_names: tuple[str, ...]

    def predict_proba_columns(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, record: Record | Mapping) -> float:
        values = record.values if isinstance(record, Record) else record
        columns = {}
        for name in self.feature_names:
            if name not in values:
                raise PredictionError(f"missing feature {name!r}")
            columns[name] = np.asarray([values[name]])
        return float(self.predict_proba_columns(columns)[0])


class LogisticModel(_Model):
    """L2-penalized logistic regression fit by full-batch gradient descent."""

    def __init__(self, codec: _FeatureCodec, weights: np.ndarray, bias: float,
                 mean: np.ndarray, scale: np.ndarray):
        self._codec = codec
        self.feature_names = codec.names
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, data: Dataset, features: Sequence[str], targets: np.ndarray,
            learning_rate: float = 0.1, iterations: int = 5000,
            l2: float = 1e-4) -> "LogisticModel":
        codec = _FeatureCodec.from_schema(data, features)
        x = codec.encode(data.columns(codec.names))
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0.0] = 1.0
        xs = (x - mean) / scale
        y = targets.astype(np.float64)
        n = len(y)
        w = np.zeros(xs.shape[1])
        b = 0.0
        for _ in range(iterations):
            p = _sigmoid(xs @ w + b)
            err = p - y
            gw = xs.T @ err / n + l2 * w
            gb = err.mean()
            w -= learning_rate * gw
            b -= learning_rate * gb
        return cls(codec, w, b, mean, scale)

    def decision_values(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        x = self._codec.encode(columns)
        xs = (x - self.mean) / self.scale
        return xs @ self.weights + self.bias

    def predict_proba_columns(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        return _sigmoid(self.decision_values(columns))

    def loss_gradient(self, columns: Mapping[str, np.ndarray], targets: np.ndarray,
                      l2: float = 1e-4) -> tuple[np.ndarray, float]:
        """Gradient of the penalized mean log-loss at the fitted parameters."""
        x = self._codec.encode(columns)
        xs = (x - self.mean) / self.scale
        p = _sigmoid(xs @ self.weights + self.bias)
        err = p - np.asarray(targets, dtype=np.float64)
        return xs.T @ err / len(err) + l2 * self.weights, float(err.mean())


class NaiveBayesModel(_Model):
    """Naive Bayes: Gaussian likelihoods for continuous features, add-one
    smoothed tables for binary and categorical ones."""

    def __init__(self, features: tuple[tuple[str, str, int], ...],
                 log_prior: np.ndarray, params: dict):
        self.features = features
        self.feature_names = tuple(name for name, _, _ in features)
        self.log_prior = np.asarray(log_prior, dtype=np.float64)
        self.params = params

    @classmethod
    def fit(cls, data: Dataset, features: Sequence[str], targets: np.ndarray,
            var_smoothing: float = 1e-9) -> "NaiveBayesModel":
        specs = []
        for name in features:
            spec = data.schema.attribute(name)
            n_levels = len(spec.levels) if spec.kind == CATEGORICAL else 2
            specs.append((name, spec.kind, n_levels))
        y = targets.astype(np.int64)
        n = len(y)
        masks = [y == 0, y == 1]
        log_prior = np.log(np.array([m.sum() / n for m in masks]))
        params: dict[str, tuple] = {}
        max_var = 0.0
        for name, kind, _ in specs:
            if kind == CONTINUOUS:
                max_var = max(max_var, float(data.column(name).var()))
        eps = var_smoothing * max(max_var, 1.0)
        for name, kind, n_levels in specs:
            col = data.column(name)
            if kind == CONTINUOUS:
                means = np.array([col[m].mean() for m in masks])
                variances = np.array([col[m].var() for m in masks]) + eps
                params[name] = ("gaussian", means, variances)
            else:
                idx = col.astype(np.int64)
                table = np.empty((2, n_levels))
                for cls_i, m in enumerate(masks):
                    counts = np.bincount(idx[m], minlength=n_levels).astype(np.float64)
                    table[cls_i] = (counts + 1.0) / (counts.sum() + n_levels)
                params[name] = ("table", np.log(table), n_levels)
        return cls(tuple(specs), log_prior, params)

    def predict_proba_columns(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        n = None
        log_post = None
        for name, kind, n_levels in self.features:
            if name not in columns:
                raise PredictionError(f"missing feature {name!r}")
            col = np.asarray(columns[name])
            if n is None:
                n = len(col)
                log_post = np.tile(self.log_prior, (n, 1))
            if kind == CONTINUOUS:
                _, means, variances = self.params[name]
                x = col.astype(np.float64)[:, None]
                log_post += -0.5 * (np.log(2.0 * np.pi * variances)
                                    + (x - means) ** 2 / variances)
            else:
                _, log_table, k = self.params[name]
                idx = col.astype(np.int64)
                if idx.min(initial=0) < 0 or idx.max(initial=0) >= k:
                    bad = int(np.argmax((idx < 0) | (idx >= k)))
                    raise PredictionError(
                        f"row {bad}: unseen categorical level {idx[bad]} for {name!r}"
                    )
                log_post += log_table[:, idx].T
        if log_post is None:
            raise PredictionError("model has no features")
        return _sigmoid(log_post[:, 1] - log_post[:, 0])


class KnnModel(_Model):
    """k-nearest-neighbour vote on standardized features.

    Distance ties are broken toward the lower training row id, which the
    stable sort yields for free since training rows are kept in id order.
    """

    def __init__(self, codec: _FeatureCodec, matrix: np.ndarray, labels: np.ndarray,
                 mean: np.ndarray, scale: np.ndarray, k: int):
        self._codec = codec
        self.feature_names = codec.names
        self.matrix = matrix
        self.labels = labels.astype(np.float64)
        self.mean = mean
        self.scale = scale
        self.k = int(k)

    @classmethod
    def fit(cls, data: Dataset, features: Sequence[str], targets: np.ndarray,
            k: int = 5) -> "KnnModel":
        if k < 1:
            raise TrainingError("k must be at least 1")
        if k > len(data):
            raise TrainingError(f"k={k} exceeds the {len(data)} training rows")
        codec = _FeatureCodec.from_schema(data, features)
        x = codec.encode(data.columns(codec.names))
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0.0] = 1.0
        return cls(codec, (x - mean) / scale, targets, mean, scale, k)

    def predict_proba_columns(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        x = self._codec.encode(columns)
        xs = (x - self.mean) / self.scale
        out = np.empty(len(xs))
        n_train = len(self.matrix)
        train_sq = (self.matrix ** 2).sum(axis=1)
        # Candidate buffer wide enough that boundary ties stay inside it.
        width = min(n_train, max(4 * self.k, 32))
        chunk = max(1, 2_000_000 // max(n_train, 1))
        for start in range(0, len(xs), chunk):
            block = xs[start:start + chunk]
            d2 = train_sq + (block ** 2).sum(axis=1)[:, None] - 2.0 * block @ self.matrix.T
            if width < n_train:
                cand = np.argpartition(d2, width - 1, axis=1)[:, :width]
                cand.sort(axis=1)  # candidate ids ascending, so stable sort
                d2 = np.take_along_axis(d2, cand, axis=1)
            else:
                cand = None
            order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            if cand is not None:
                order = np.take_along_axis(cand, order, axis=1)
            out[start:start + chunk] = self.labels[order].mean(axis=1)
        return np.clip(out, 0.0, 1.0)


class LookupModel(_Model):
    """Probability table keyed by exact feature value tuples."""

    def __init__(self, feature_names: Sequence[str], table: Mapping[tuple, float]):
        self.feature_names = tuple(feature_names)
        self.table = {}
        for key, prob in table.items():
            key = tuple(_scalar(v) for v in key)
            if len(key) != len(self.feature_names):
                raise DataError(f"table key {key!r} does not match feature count")
            if not 0.0 <= prob <= 1.0:
                raise DataError(f"probability {prob!r} out of [0, 1] for key {key!r}")
            self.table[key] = float(prob)

    def predict_proba_columns(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        cols = []
        for name in self.feature_names:
            if name not in columns:
                raise PredictionError(f"missing feature {name!r}")
            cols.append(np.asarray(columns[name]))
        n = len(cols[0]) if cols else 0
        out = np.empty(n)
        for i in range(n):
            key = tuple(_scalar(c[i]) for c in cols)
            try:
                out[i] = self.table[key]
            except KeyError:
                raise PredictionError(f"row {i}: no table entry for {key!r}") from None
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "features": list(self.feature_names),
                "table": [[list(k), p] for k, p in sorted(self.table.items())],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LookupModel":
        obj = json.loads(text)
        return cls(obj["features"], {tuple(k): p for k, p in obj["table"]})


def _scalar(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return v


class ExternalModel(_Model):
    """Adapter for out-of-process classifiers.

    Each batch is one subprocess invocation: the command receives a CSV
    with a header of the feature columns on stdin and must print one
    probability per input row to stdout, exiting 0.
    """

    def __init__(self, feature_names: Sequence[str], command: str | Sequence[str]):
        self.feature_names = tuple(feature_names)
        self.command = command

    def predict_proba_columns(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        cols = []
        for name in self.feature_names:
            if name not in columns:
                raise PredictionError(f"missing feature {name!r}")
            cols.append(np.asarray(columns[name]))
        n = len(cols[0]) if cols else 0
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.feature_names)
        for i in range(n):
            writer.writerow([_scalar(c[i]) for c in cols])
        shell = isinstance(self.command, str)
        proc = subprocess.run(
            self.command, input=buf.getvalue(), capture_output=True,
            text=True, shell=shell,
        )
        if proc.returncode != 0:
            raise ExternalModelError(
                f"external classifier exited with code {proc.returncode}: "
                f"{proc.stderr.strip()[:500]}"
            )
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != n:
            raise ExternalModelError(
                f"external classifier returned {len(lines)} probabilities for {n} rows"
            )
        try:
            probs = np.array([float(ln) for ln in lines])
        except ValueError as exc:
            raise ExternalModelError(
                f"unparseable probability from external classifier: {exc}"
            ) from None
        if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
            bad = probs[(probs < 0.0) | (probs > 1.0)][0]
            raise ExternalModelError(f"external probability {bad} out of [0, 1]")
        return probs


def external_predict(command: str | Sequence[str], records: Sequence[Record | Mapping],
                     feature_names: Sequence[str]) -> list[float]:
    """Score a batch of records through an external classifier process."""
    model = ExternalModel(feature_names, command)
    columns: dict[str, np.ndarray] = {}
    for name in feature_names:
        vals = []
        for r in records:
            values = r.values if isinstance(r, Record) else r
            if name not in values:
                raise PredictionError(f"missing feature {name!r}")
            vals.append(values[name])
        columns[name] = np.asarray(vals)
    if not feature_names:
        raise PredictionError("external model needs at least one feature column")
    return [float(p) for p in model.predict_proba_columns(columns)]


_KINDS = {
    "logistic": LogisticModel.fit,
    "naive_bayes": NaiveBayesModel.fit,
    "knn": KnnModel.fit,
}


def train(kind: str, data: Dataset, features: Sequence[str], **hyperparameters):
    """Fit one of the built-in classifiers on a dataset.

    Training is fully deterministic: refitting on the same inputs yields
    identical parameters.
    """
    if kind not in _KINDS:
        raise TrainingError(f"unknown classifier kind {kind!r}; expected one of {sorted(_KINDS)}")
    if len(data) == 0:
        raise TrainingError("cannot train on an empty dataset")
    outcome = data.schema.roles.outcome
    if outcome in features:
        raise TrainingError(f"outcome attribute {outcome!r} cannot be a feature")
    for name in features:
        data.schema.attribute(name)
    targets = data.column(outcome)
    if len(np.unique(targets)) < 2:
        raise TrainingError("degenerate training data: a single outcome class")
    return _KINDS[kind](data, list(features), targets, **hyperparameters)


def flip_protected(record: Record, roles: AuditRoles) -> Record:
    """The same record with the binary protected attribute flipped 0 <-> 1."""
    values = dict(record.values)
    if roles.protected not in values:
        raise PredictionError(f"record lacks protected attribute {roles.protected!r}")
    a = values[roles.protected]
    if a not in (0, 1):
        raise PredictionError(f"protected attribute value {a!r} is not binary")
    values[roles.protected] = 1 - int(a)
    return Record(id=record.id, values=values)
