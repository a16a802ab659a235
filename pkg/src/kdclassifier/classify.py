"""MAP classification over per-class kernel mixtures, plus error metrics."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .density import log_mixture_batch
from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class Classifier:
    """Class models with log priors.

    ``width``/``height`` and ``meta`` are bookkeeping for persistence and
    inspection; they do not affect predictions.
    """

    models: tuple
    log_priors: np.ndarray
    width: int = 0
    height: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        models = tuple(self.models)
        priors = np.asarray(self.log_priors, dtype=np.float64)
        if priors.shape != (len(models),):
            raise ShapeError(f"{len(models)} models but {priors.shape} priors")
        if abs(np.exp(priors).sum() - 1.0) > 1e-9:
            raise ConfigurationError("class priors must sum to 1")
        if len({(m.dimension, m.q) for m in models}) > 1:
            raise ShapeError("all class models must share dimension and q")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "log_priors", priors)

    @property
    def class_count(self):
        return len(self.models)

    @property
    def dimension(self):
        return self.models[0].dimension

    def with_variances(self, variances):
        """Same kernels and weights, different variance pair."""
        return Classifier(
            tuple(m.with_variances(variances) for m in self.models),
            self.log_priors,
            self.width,
            self.height,
            dict(self.meta),
        )


def empirical_log_priors(labels, class_count):
    counts = np.bincount(np.asarray(labels), minlength=class_count).astype(np.float64)
    if (counts == 0).any():
        raise ConfigurationError("empirical priors need at least one sample of every class")
    return np.log(counts / counts.sum())


def uniform_log_priors(class_count):
    return np.full(class_count, -np.log(class_count))


def class_log_likelihoods(X, classifier, threads=1):
    """``(n, M)`` matrix of class-conditional log-likelihoods."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != classifier.dimension:
        raise ShapeError(f"inputs have {X.shape[1]} pixels, model expects {classifier.dimension}")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            cols = list(pool.map(lambda m: log_mixture_batch(X, m), classifier.models))
    else:
        cols = [log_mixture_batch(X, m) for m in classifier.models]
    return np.column_stack(cols)


def softmax_rows(scores):
    shift = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - shift)
    return e / e.sum(axis=1, keepdims=True)


def posteriors(X, classifier, threads=1):
    return softmax_rows(class_log_likelihoods(X, classifier, threads) + classifier.log_priors)


def posterior(x, classifier):
    return posteriors(np.asarray(x)[None, :], classifier)[0]


def predict_batch(X, classifier, threads=1):
    # argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(posteriors(X, classifier, threads), axis=1)


def predict(x, classifier):
    return int(np.argmax(posterior(x, classifier)))


@dataclass(frozen=True)
class Metrics:
    error_rate: float
    confusion: np.ndarray
    per_class_error: np.ndarray

    @property
    def total(self):
        return int(self.confusion.sum())

    def to_text(self):
        M = self.confusion.shape[0]
        correct = int(np.trace(self.confusion))
        lines = [
            f"samples\t{self.total}",
            f"correct\t{correct}",
            f"errors\t{self.total - correct}",
            f"error_rate\t{self.error_rate!r}",
            "per_class_error\t" + "\t".join(repr(float(e)) for e in self.per_class_error),
            "# confusion: rows = true class, columns = predicted class",
            "confusion\t" + "\t".join(str(m) for m in range(M)),
        ]
        for m in range(M):
            lines.append(f"{m}\t" + "\t".join(str(int(c)) for c in self.confusion[m]))
        return "\n".join(lines) + "\n"


def metrics_from_predictions(labels, predicted, class_count):
    labels = np.asarray(labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    confusion = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    total = confusion.sum()
    error = (total - np.trace(confusion)) / total if total else 0.0
    per_class = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class_error = np.where(per_class > 0, (per_class - np.diag(confusion)) / np.maximum(per_class, 1), 0.0)
    return Metrics(float(error), confusion, per_class_error)


def evaluate(test, classifier, threads=1, return_posteriors=False):
    """Classify every test image and tabulate the errors."""
    if test.labels.size and test.labels.max() >= classifier.class_count:
        raise ConfigurationError("test labels exceed the classifier's class count")
    post = posteriors(test.images, classifier, threads)
    metrics = metrics_from_predictions(test.labels, np.argmax(post, axis=1), classifier.class_count)
    return (metrics, post) if return_posteriors else metrics
