"""Iterative kernel selection: drop the most expendable kernel, add the most
popular non-kernel sample, repeat for a fixed number of iterations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _kernels
from .density import ClassModel, Kernel, VarianceParams, kernel_log_densities, kernel_log_matrix
from .distortion import DEFAULT_STEP, build_basis
from .errors import CapacityError, ConfigurationError, DegeneracyError, UnderflowError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionConfig:
    kernel_count: int = 100
    iterations: int = 500
    assignment_scale: Union[float, str] = "auto"
    seed: int = 0
    p: int = 3
    q: int = 40
    variances: VarianceParams = field(default_factory=VarianceParams)
    step: float = DEFAULT_STEP

    def __post_init__(self):
        if self.kernel_count < 2:
            raise ConfigurationError("kernel_count must be >= 2")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.p < 1 or self.q < 1:
            raise ConfigurationError("p and q must be >= 1")
        if self.assignment_scale != "auto" and not float(self.assignment_scale) > 0:
            raise ConfigurationError("assignment_scale must be 'auto' or a positive number")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    q_m: float
    removed: int
    added: int
    skipped: tuple = ()


@dataclass
class SelectionTrace:
    initial_q: float = float("nan")
    records: list = field(default_factory=list)
    density_evaluations: int = 0

    @property
    def q_history(self):
        return np.array([r.q_m for r in self.records])

    def to_text(self):
        lines = [f"# initial_q\t{self.initial_q!r}", "# iteration\tq_m\tremoved\tadded\tskipped"]
        for r in self.records:
            skipped = ",".join(str(s) for s in r.skipped) or "-"
            lines.append(f"{r.iteration}\t{r.q_m!r}\t{r.removed}\t{r.added}\t{skipped}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        trace = cls()
        for line in text.splitlines():
            if line.startswith("# initial_q"):
                trace.initial_q = float(line.split("\t")[1])
            if not line or line.startswith("#"):
                continue
            it, q, rem, add, skipped = line.split("\t")
            skip = () if skipped == "-" else tuple(int(s) for s in skipped.split(","))
            trace.records.append(TraceRecord(int(it), float(q), int(rem), int(add), skip))
        return trace


@dataclass(frozen=True)
class LikelihoodMatrix:
    """Per-kernel log-densities with the row-max shift kept alongside.

    ``scaled[i, k] = exp(log_p[i, k] - shift[i])`` so the largest entry of
    every row is exactly 1.
    """

    log_p: np.ndarray

    @property
    def shift(self):
        return self.log_p.max(axis=1)

    @property
    def scaled(self):
        return np.exp(self.log_p - self.shift[:, None])


def likelihood_matrix(samples, model):
    return LikelihoodMatrix(kernel_log_matrix(samples, model))


def kernel_weights(W):
    """Mixture weights from a likelihood matrix (rows need not be normalized).

    Rows are normalized to sum to one, the columns summed into effective
    sample counts, and those counts normalized.
    """
    W = np.asarray(W, dtype=np.float64)
    rows = W.sum(axis=1)
    if not (rows > 0).all():
        bad = int(np.flatnonzero(~(rows > 0))[0])
        raise UnderflowError(f"likelihood row {bad} has no positive entry")
    alpha = (W / rows[:, None]).sum(axis=0)
    return alpha / alpha.sum()


def _weights_from_log(log_p):
    return kernel_weights(LikelihoodMatrix(log_p).scaled)


def _total_from_log(log_p, weights):
    live = weights > 0
    t = log_p[:, live] + np.log(weights[live])
    shift = t.max(axis=1)
    return float((shift + np.log(np.exp(t - shift[:, None]).sum(axis=1))).sum())


def total_log_likelihood(samples, model):
    """Sum of class-conditional log-likelihoods over ``samples``."""
    return _total_from_log(kernel_log_matrix(samples, model), model.weights)


def removal_scores(log_p, weights):
    """Total log-likelihood after deleting each kernel in turn."""
    return _kernels.removal_scores(
        np.ascontiguousarray(log_p, dtype=np.float64), np.ascontiguousarray(weights, dtype=np.float64)
    )


def most_expendable_kernel(samples, model, cache=None):
    """Index of the kernel whose removal costs the least log-likelihood.

    ``cache`` may be a precomputed :class:`LikelihoodMatrix` for ``samples``;
    only the mixture sums are recomputed per trial removal.
    """
    if len(model.kernels) < 2:
        raise ConfigurationError("need at least two kernels to remove one")
    if cache is None:
        cache = likelihood_matrix(samples, model)
    return int(np.argmax(removal_scores(cache.log_p, model.weights)))


def pairwise_distances(samples):
    """Euclidean distance matrix with an infinite diagonal."""
    X = np.asarray(samples, dtype=np.float64)
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    D = np.sqrt(d2)
    np.fill_diagonal(D, np.inf)
    return D


def auto_scale(distances):
    finite = distances[np.isfinite(distances)]
    if finite.size == 0:
        raise CapacityError("no finite pairwise distances")
    return float(finite.mean())


def addition_values(kernel_ids, distances, scale):
    """Assignment mass ``a_l`` received by every sample from the non-kernels."""
    if not scale > 0:
        raise ConfigurationError("assignment scale must be positive")
    L = distances.shape[0]
    is_kernel = np.zeros(L, dtype=bool)
    is_kernel[np.asarray(kernel_ids, dtype=np.int64)] = True
    rows = np.flatnonzero(~is_kernel)
    if rows.size == 0:
        raise CapacityError("every sample is already a kernel")
    votes = _kernels.assignment_votes(np.ascontiguousarray(distances), rows, float(scale))
    return votes, rows


def addition_ranking(kernel_ids, distances, scale):
    """Non-kernel samples ordered by decreasing value, ties by lowest index."""
    votes, rows = addition_values(kernel_ids, distances, scale)
    order = np.lexsort((rows, -votes[rows]))
    return rows[order]


def best_addition(kernel_ids, distances, scale):
    return int(addition_ranking(kernel_ids, distances, scale)[0])


def select_kernels(
    samples,
    config,
    operators,
    class_index=0,
    sample_ids: Optional[np.ndarray] = None,
):
    """Run kernel selection on one class's training images.

    Returns the final :class:`ClassModel` and the per-iteration trace.
    Kernel ``sample_id`` values are ``sample_ids[i]`` (default: row index).
    """
    X = np.ascontiguousarray(samples, dtype=np.float64)
    L = X.shape[0]
    K = config.kernel_count
    if L <= K:
        raise CapacityError(f"need more than {K} samples, have {L}")
    ids = np.arange(L) if sample_ids is None else np.asarray(sample_ids)
    v = config.variances
    rng = np.random.default_rng(config.seed)
    trace = SelectionTrace()

    def build(i):
        return build_basis(X[i], operators, config.p, config.q)

    kernel_rows, bases = [], []
    for i in rng.permutation(L):
        try:
            bases.append(build(i))
        except DegeneracyError:
            log.info("class %d: sample %d is degenerate, not used as initial kernel", class_index, ids[i])
            continue
        kernel_rows.append(int(i))
        if len(kernel_rows) == K:
            break
    if len(kernel_rows) < K:
        raise CapacityError(f"class {class_index}: fewer than {K} non-degenerate samples")

    log_p = np.empty((L, K))
    for k, basis in enumerate(bases):
        log_p[:, k] = kernel_log_densities(X, basis, v)
    trace.density_evaluations += L * K
    weights = _weights_from_log(log_p)
    trace.initial_q = _total_from_log(log_p, weights)

    distances = scale = None
    if config.iterations:
        distances = pairwise_distances(X)
        scale = auto_scale(distances) if config.assignment_scale == "auto" else float(config.assignment_scale)

    for it in range(1, config.iterations + 1):
        out = int(np.argmax(removal_scores(log_p, weights)))
        ranking = addition_ranking(kernel_rows, distances, scale)
        skipped = []
        for cand in ranking:
            try:
                basis = build(cand)
            except DegeneracyError:
                skipped.append(int(ids[cand]))
                continue
            break
        else:
            raise CapacityError(f"class {class_index}: no usable candidate kernel")
        removed = kernel_rows[out]
        kernel_rows[out] = int(cand)
        bases[out] = basis
        log_p[:, out] = kernel_log_densities(X, basis, v)
        trace.density_evaluations += L
        weights = _weights_from_log(log_p)
        q_m = _total_from_log(log_p, weights)
        trace.records.append(TraceRecord(it, q_m, int(ids[removed]), int(ids[cand]), tuple(skipped)))
        log.debug("class %d iter %d: Q=%.6g removed %d added %d", class_index, it, q_m, ids[removed], ids[cand])

    kernels = tuple(
        Kernel(X[r].copy(), b, float(w), int(ids[r])) for r, b, w in zip(kernel_rows, bases, weights)
    )
    return ClassModel(class_index, kernels, v), trace
