"""Differential distortion operators and per-kernel distortion subspaces.

Each operator is a sparse perturbation ``P~`` acting on flattened row-major
images; the full distortion is ``I + P~``.  A kernel's distortion matrix
stacks every mixed monomial ``P~1^a1 ... P~5^a5 x`` up to total degree
``p``; its leading left singular vectors span the distortion subspace.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DegeneracyError, ShapeError

MODES = ("x_translation", "y_translation", "x_expansion", "y_expansion", "rotation")

DEFAULT_STEP = 0.5

# Columns with norm below this fraction of the center's norm count as zero.
_ZERO_COLUMN_RTOL = 1e-12
_DEGENERATE_RESIDUAL = 1e-10


@dataclass(frozen=True)
class DistortionOperator:
    mode: str
    matrix: sp.csr_matrix
    step: float

    def __call__(self, x):
        return self.matrix @ x


@dataclass(frozen=True)
class DistortionBasis:
    """Orthonormal distortion directions ``U`` plus the amplitude direction.

    ``x_tilde`` is the kernel center with its ``U`` component removed,
    normalized to unit length.  The noise subspace is everything orthogonal
    to ``[x_tilde, U]`` and is never stored.
    """

    U: np.ndarray
    x_tilde: np.ndarray
    center: np.ndarray

    @property
    def q(self):
        return self.U.shape[1]

    @property
    def dimension(self):
        return self.U.shape[0]

    def explained(self):
        """``[x_tilde, U]`` as one ``(D, q + 1)`` matrix."""
        return np.column_stack([self.x_tilde, self.U])

    def check(self):
        """Largest deviation of ``[x_tilde, U]`` from orthonormality."""
        B = self.explained()
        return float(np.abs(B.T @ B - np.eye(B.shape[1])).max())


def _central_difference(n):
    # (f[i+1] - f[i-1]) / 2 with zeros outside the image
    return sp.diags([-0.5, 0.5], [-1, 1], shape=(n, n), format="csr")


def build_operators(width, height, step=DEFAULT_STEP):
    """The five distortion perturbations for a ``width`` x ``height`` grid.

    Coordinates ``u`` (columns) and ``v`` (rows) are measured from the image
    center and divided by half the width and height respectively.
    """
    if width < 3 or height < 3:
        raise ShapeError(f"images must be at least 3x3, got {width}x{height}")
    if not 0.0 < step <= 1.0:
        raise ConfigurationError(f"step must lie in (0, 1], got {step}")

    dx = sp.kron(sp.identity(height), _central_difference(width), format="csr")
    dy = sp.kron(_central_difference(height), sp.identity(width), format="csr")
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    u = ((cols - (width - 1) / 2.0) / (width / 2.0)).ravel()
    v = ((rows - (height - 1) / 2.0) / (height / 2.0)).ravel()
    U, V = sp.diags(u), sp.diags(v)

    mats = (dx, dy, U @ dx, V @ dy, U @ dy - V @ dx)
    ops = []
    for mode, mat in zip(MODES, mats):
        mat = (step * mat).tocsr()
        mat.eliminate_zeros()
        mat.sort_indices()
        ops.append(DistortionOperator(mode, mat, float(step)))
    return ops


def monomial_exponents(p, n_modes=len(MODES)):
    """Exponent tuples with total degree 1..p.

    Ordered by degree, then lexicographically descending, so degree one reads
    ``P1 x, P2 x, ...``.
    """
    out = []
    for degree in range(1, p + 1):
        tuples = [
            t for t in itertools.product(range(degree + 1), repeat=n_modes) if sum(t) == degree
        ]
        out.extend(sorted(tuples, reverse=True))
    return out


def distortion_columns(center, operators, p):
    """Unnormalized monomial images, one column per exponent tuple.

    ``P1^a1 ... P5^a5 x`` is applied right to left (the last mode first).
    Each column reuses the column with one fewer power of its leftmost mode.
    """
    if p < 1:
        raise ConfigurationError("polynomial order p must be >= 1")
    x = np.asarray(center, dtype=np.float64)
    exps = monomial_exponents(p, len(operators))
    cache = {(0,) * len(operators): x}
    cols = np.empty((x.shape[0], len(exps)))
    for j, a in enumerate(exps):
        lead = next(i for i, ai in enumerate(a) if ai)
        prev = a[:lead] + (a[lead] - 1,) + a[lead + 1 :]
        vec = operators[lead].matrix @ cache[prev]
        cache[a] = vec
        cols[:, j] = vec
    return cols


def build_distortion_matrix(center, operators, p):
    """Unit-normalized distortion matrix ``A`` with zero columns dropped."""
    x = np.asarray(center, dtype=np.float64)
    scale = np.linalg.norm(x)
    if scale == 0.0:
        raise DegeneracyError("kernel center is the zero image")
    cols = distortion_columns(x, operators, p)
    norms = np.linalg.norm(cols, axis=0)
    keep = norms > _ZERO_COLUMN_RTOL * scale
    if not keep.any():
        raise DegeneracyError("every distortion column vanishes for this center")
    return cols[:, keep] / norms[keep]


def distortion_basis(center, A, q):
    """Truncated-SVD basis of ``A`` plus the orthogonalized amplitude vector."""
    x = np.asarray(center, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != x.shape[0]:
        raise ShapeError(f"A has shape {A.shape}, center has length {x.shape[0]}")
    if not 1 <= q <= min(A.shape[1], x.shape[0] - 1):
        raise ConfigurationError(
            f"q={q} must lie in [1, min({A.shape[1]} columns, {x.shape[0] - 1})]"
        )
    left, _, _ = np.linalg.svd(A, full_matrices=False)
    U = np.ascontiguousarray(left[:, :q])

    resid = x - U @ (U.T @ x)
    norm = np.linalg.norm(resid)
    if norm < _DEGENERATE_RESIDUAL:
        raise DegeneracyError("kernel center lies inside its own distortion subspace")
    # second projection pass restores orthogonality lost to cancellation
    resid = resid - U @ (U.T @ resid)
    x_tilde = resid / np.linalg.norm(resid)

    for arr in (U, x_tilde):
        arr.setflags(write=False)
    x = x.copy()
    x.setflags(write=False)
    return DistortionBasis(U, x_tilde, x)


def build_basis(center, operators, p, q):
    """Distortion matrix and truncated basis in one call."""
    return distortion_basis(center, build_distortion_matrix(center, operators, p), q)
