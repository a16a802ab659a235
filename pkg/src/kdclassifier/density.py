"""Structured-covariance Gaussian kernels and class-conditional mixtures.

A kernel's covariance has eigenvalue ``sigma_d2`` on the ``q + 1``
dimensional span of ``[x_tilde, U]`` and ``sigma_o2`` on the rest.  The
log-density therefore needs only projections onto ``q + 1`` vectors; the
energy in the noise subspace is the remainder of ``||x - center||^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distortion import DistortionBasis
from .errors import ConfigurationError, ModelError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class VarianceParams:
    sigma_d2: float = 0.9
    sigma_o2: float = 0.03

    def __post_init__(self):
        if not (self.sigma_d2 > 0 and self.sigma_o2 > 0):
            raise ConfigurationError("both variances must be strictly positive")

    @property
    def ratio(self):
        return self.sigma_d2 / self.sigma_o2


@dataclass(frozen=True)
class Kernel:
    center: np.ndarray
    basis: DistortionBasis
    weight: float
    sample_id: int = -1


@dataclass(frozen=True)
class ClassModel:
    """K weighted kernels for one class, sharing a pair of variances."""

    class_index: int
    kernels: tuple
    variances: VarianceParams

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise ModelError("a class model needs at least one kernel")
        w = np.array([k.weight for k in kernels])
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ModelError(f"kernel weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        dims = {k.basis.dimension for k in kernels}
        qs = {k.basis.q for k in kernels}
        if len(dims) != 1 or len(qs) != 1:
            raise ShapeError("all kernels of a class must share dimension and q")
        object.__setattr__(self, "kernels", kernels)

    @property
    def dimension(self):
        return self.kernels[0].basis.dimension

    @property
    def q(self):
        return self.kernels[0].basis.q

    @property
    def weights(self):
        return np.array([k.weight for k in self.kernels])

    @property
    def sample_ids(self):
        return [k.sample_id for k in self.kernels]

    def with_variances(self, variances):
        return ClassModel(self.class_index, self.kernels, variances)


def _log_normalizer(q, dim, v):
    return (q + 1) * math.log(v.sigma_d2) + (dim - q - 1) * math.log(v.sigma_o2) + dim * LOG_2PI


def subspace_energies(X, basis):
    """Distortion-plus-amplitude energy and unclamped noise energy per row."""
    d = np.atleast_2d(X) - basis.center
    proj = d @ basis.U
    amp = d @ basis.x_tilde
    e_d = np.einsum("ij,ij->i", proj, proj) + amp * amp
    total = np.einsum("ij,ij->i", d, d)
    return e_d, total - e_d


def kernel_log_densities(X, basis, v):
    """Log-density of every row of ``X`` under one kernel."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != basis.dimension:
        raise ShapeError(f"inputs have {X.shape[1]} pixels, kernel has {basis.dimension}")
    e_d, e_o = subspace_energies(X, basis)
    np.maximum(e_o, 0.0, out=e_o)
    const = _log_normalizer(basis.q, basis.dimension, v)
    return -0.5 * (e_d / v.sigma_d2 + e_o / v.sigma_o2 + const)


def log_kernel_density(x, center, basis, v):
    """Log-density of a single image under one structured Gaussian kernel."""
    x = np.asarray(x, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if x.shape != center.shape or x.shape != (basis.dimension,):
        raise ShapeError(f"x {x.shape}, center {center.shape}, basis dimension {basis.dimension}")
    if center is not basis.center and not np.array_equal(center, basis.center):
        basis = DistortionBasis(basis.U, basis.x_tilde, center)
    return float(kernel_log_densities(x[None, :], basis, v)[0])


def dense_covariance_oracle(basis, v):
    """Materialize the full ``D x D`` covariance (tests and small images only)."""
    B = basis.explained()
    P = B @ B.T
    return v.sigma_d2 * P + v.sigma_o2 * (np.eye(basis.dimension) - P)


def dense_log_density(x, center, R):
    """Gaussian log-density with an explicit covariance, via Cholesky."""
    d = np.asarray(x, dtype=np.float64) - center
    L = np.linalg.cholesky(R)
    z = np.linalg.solve(L, d)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(-0.5 * (z @ z + logdet + d.shape[0] * LOG_2PI))


def log_sum_exp_weighted(log_terms, weights):
    """``log(sum_k w_k exp(t_k))`` along the last axis, skipping zero weights."""
    weights = np.asarray(weights, dtype=np.float64)
    live = weights > 0
    if not live.any():
        raise ModelError("all kernel weights are zero")
    t = np.asarray(log_terms)[..., live] + np.log(weights[live])
    shift = t.max(axis=-1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    return (shift + np.log(np.exp(t - shift).sum(axis=-1, keepdims=True)))[..., 0]


def kernel_log_matrix(X, model):
    """``(n, K)`` per-kernel log-densities of each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty((X.shape[0], len(model.kernels)))
    for k, kern in enumerate(model.kernels):
        if kern.weight > 0:
            out[:, k] = kernel_log_densities(X, kern.basis, model.variances)
        else:
            out[:, k] = -np.inf
    return out


def log_mixture_batch(X, model):
    """Class-conditional log-likelihood of each row of ``X``."""
    return log_sum_exp_weighted(kernel_log_matrix(X, model), model.weights)


def log_mixture(x, model):
    return float(log_mixture_batch(np.asarray(x)[None, :], model)[0])
