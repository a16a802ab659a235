"""Cascading and stacking of generative and discriminative posteriors."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ConsistencyError, FormatError, KDIOError, RangeError

ROW_SUM_TOL = 1e-6
DEFAULT_GRID = tuple(round(0.01 * i, 2) for i in range(101))


@dataclass(frozen=True)
class PosteriorTable:
    rows: np.ndarray
    source_name: str = ""

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise FormatError("posterior table must be two-dimensional")
        validate_posteriors(rows)
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return self.rows.shape[0]

    @property
    def class_count(self):
        return self.rows.shape[1]


def validate_posteriors(rows, tol=ROW_SUM_TOL):
    if rows.size and rows.min() < 0:
        bad = int(np.argwhere(rows < 0)[0, 0])
        raise RangeError(f"row {bad}: negative probability")
    sums = rows.sum(axis=1)
    off = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if off.size:
        raise RangeError(f"row {int(off[0])}: probabilities sum to {sums[off[0]]!r}, not 1")


def load_posterior_table(path, expected_rows, class_count, source_name=None):
    """Read ``index p_0 ... p_{M-1}`` lines; rows may appear in any order."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise KDIOError(f"cannot read {path}: {exc}") from exc
    index, values = [], []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = text.replace(",", " ").split()
        if len(fields) != class_count + 1:
            raise FormatError(f"{path}:{lineno}: expected {class_count + 1} fields, got {len(fields)}")
        try:
            index.append(int(fields[0]))
            values.append([float(f) for f in fields[1:]])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc

    index = np.array(index, dtype=np.int64)
    if index.size != expected_rows:
        raise ConsistencyError(f"{path}: {index.size} rows, expected {expected_rows}")
    seen = np.bincount(index[(index >= 0) & (index < expected_rows)], minlength=expected_rows)
    if (index < 0).any() or (index >= expected_rows).any() or (seen != 1).any():
        missing = np.flatnonzero(seen == 0)
        raise ConsistencyError(
            f"{path}: sample indices must be 0..{expected_rows - 1} exactly once "
            f"(first missing: {int(missing[0]) if missing.size else 'none'})"
        )
    rows = np.empty((expected_rows, class_count))
    rows[index] = np.array(values, dtype=np.float64).reshape(-1, class_count)
    return PosteriorTable(rows, source_name if source_name is not None else str(path))


def format_posterior_table(table):
    lines = [f"# source: {table.source_name}" if table.source_name else "# source: -"]
    lines.append("# index\t" + "\t".join(f"p{m}" for m in range(table.class_count)))
    for i, row in enumerate(table.rows):
        lines.append(f"{i}\t" + "\t".join(f"{p:.17g}" for p in row))
    return "\n".join(lines) + "\n"


def write_posterior_table(table, path):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_posterior_table(table))
    except OSError as exc:
        raise KDIOError(f"cannot write {path}: {exc}") from exc


def cascade(p_d, p_g, tau):
    """Discriminative label if its top posterior strictly exceeds ``tau``."""
    p_d = np.asarray(p_d)
    if p_d.max() > tau:
        return int(np.argmax(p_d))
    return int(np.argmax(p_g))


def stack(p_d, p_g, w):
    """Label maximizing ``w * p_d + (1 - w) * p_g``."""
    return int(np.argmax(w * np.asarray(p_d) + (1.0 - w) * np.asarray(p_g)))


def cascade_predict(P_d, P_g, tau):
    trust = P_d.max(axis=1) > tau
    return np.where(trust, np.argmax(P_d, axis=1), np.argmax(P_g, axis=1))


def stack_predict(P_d, P_g, w):
    return np.argmax(w * P_d + (1.0 - w) * P_g, axis=1)


COMBINERS = {"cascade": cascade_predict, "stack": stack_predict}


def hybrid_error(combiner, P_d, P_g, labels, param):
    pred = COMBINERS[combiner](np.asarray(P_d), np.asarray(P_g), param)
    return float(np.mean(pred != np.asarray(labels)))


def stratified_folds(labels, folds, seed):
    """Fold id per sample; each class is dealt round-robin after shuffling."""
    labels = np.asarray(labels)
    if folds < 2 or folds > labels.size:
        raise ConfigurationError(f"folds must lie in [2, {labels.size}]")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for m in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == m))
        fold_of[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return fold_of


@dataclass(frozen=True)
class TuneResult:
    best: float
    grid: tuple
    mean_fold_error: np.ndarray

    def to_text(self):
        lines = [f"best\t{self.best!r}", "# parameter\tmean_fold_error"]
        lines += [f"{g!r}\t{float(e)!r}" for g, e in zip(self.grid, self.mean_fold_error)]
        return "\n".join(lines) + "\n"


def tune(combiner, P_d, P_g, labels, grid=DEFAULT_GRID, folds=10, seed=0, threads=1):
    """Grid value with the lowest mean k-fold error; ties go to the smallest value."""
    if combiner not in COMBINERS:
        raise ConfigurationError(f"unknown combiner {combiner!r}")
    grid = tuple(float(g) for g in grid)
    if not grid:
        raise ConfigurationError("tuning grid is empty")
    if any(not 0.0 <= g <= 1.0 for g in grid):
        raise ConfigurationError("grid values must lie in [0, 1]")
    P_d, P_g, labels = np.asarray(P_d), np.asarray(P_g), np.asarray(labels)
    if not (P_d.shape == P_g.shape and P_d.shape[0] == labels.shape[0]):
        raise ConsistencyError("posterior tables and labels are misaligned")
    fold_of = stratified_folds(labels, folds, seed)
    fold_ids = np.unique(fold_of)
    predict = COMBINERS[combiner]

    def score(g):
        wrong = predict(P_d, P_g, g) != labels
        return np.mean([wrong[fold_of == f].mean() for f in fold_ids])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            errors = np.array(list(pool.map(score, grid)))
    else:
        errors = np.array([score(g) for g in grid])
    order = np.lexsort((np.array(grid), errors))
    return TuneResult(grid[order[0]], grid, errors)
