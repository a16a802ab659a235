"""Per-class training orchestration shared by the CLI and scripted runs."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .classify import Classifier, empirical_log_priors, uniform_log_priors
from .distortion import build_operators
from .errors import KDError
from .selection import select_kernels

log = logging.getLogger(__name__)


class ClassTrainingError(KDError):
    def __init__(self, class_index, cause):
        super().__init__(f"class {class_index}: {cause}")
        self.class_index = class_index
        self.cause = cause


def train_classifier(train, config, priors="empirical", threads=1):
    """Select kernels for every class of ``train`` and assemble a classifier.

    Classes run concurrently on up to ``threads`` worker threads; each class
    uses ``config.seed + class_index`` so results do not depend on scheduling.
    Returns ``(classifier, traces)``.
    """
    operators = build_operators(train.width, train.height, config.step)

    def run(m):
        X, idx = train.of_class(m)
        cfg = _with_seed(config, config.seed + m)
        try:
            model, trace = select_kernels(X, cfg, operators, class_index=m, sample_ids=idx)
        except KDError as exc:
            raise ClassTrainingError(m, exc) from exc
        log.info("class %d: %d samples, Q %.6g -> %.6g", m, X.shape[0], trace.initial_q,
                 trace.records[-1].q_m if trace.records else trace.initial_q)
        return model, trace

    classes = range(train.class_count)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, classes))
    else:
        results = [run(m) for m in classes]

    if priors == "empirical":
        log_priors = empirical_log_priors(train.labels, train.class_count)
    elif priors == "uniform":
        log_priors = uniform_log_priors(train.class_count)
    else:
        raise ValueError(f"unknown prior mode {priors!r}")
    meta = {
        "p": config.p,
        "step": config.step,
        "seed": config.seed,
        "dataset_fingerprint": train.fingerprint(),
    }
    classifier = Classifier(
        tuple(r[0] for r in results), log_priors, train.width, train.height, meta
    )
    return classifier, [r[1] for r in results]


def _with_seed(config, seed):
    from dataclasses import replace

    return replace(config, seed=int(seed))
