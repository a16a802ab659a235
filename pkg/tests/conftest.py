import os
from pathlib import Path

import numpy as np
import pytest

from kdclassifier.density import ClassModel, Kernel, VarianceParams
from kdclassifier.distortion import build_basis, build_operators

MNIST_DIR = Path(os.environ.get("KDCLASSIFIER_MNIST", Path(__file__).resolve().parents[1] / "data" / "mnist"))

_ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def acceptance():
    def record(name, ok, detail=""):
        _ACCEPTANCE.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ops8():
    return build_operators(8, 8)


def smooth_image(rng, width=8, height=8, blobs=3):
    """Random non-negative image built from a few Gaussian bumps."""
    rows, cols = np.mgrid[0:height, 0:width]
    img = np.zeros((height, width))
    for _ in range(blobs):
        r, c = rng.uniform(1, height - 2), rng.uniform(1, width - 2)
        s = rng.uniform(0.8, 2.0)
        img += np.exp(-((rows - r) ** 2 + (cols - c) ** 2) / (2 * s * s))
    return (img / img.max()).ravel()


def make_model(centers, ops, weights=None, variances=None, p=2, q=4, class_index=0):
    centers = np.atleast_2d(centers)
    if weights is None:
        weights = np.full(len(centers), 1.0 / len(centers))
    variances = variances or VarianceParams(0.9, 0.03)
    kernels = tuple(
        Kernel(c, build_basis(c, ops, p, q), float(w), i) for i, (c, w) in enumerate(zip(centers, weights))
    )
    return ClassModel(class_index, kernels, variances)


def two_cluster_set(n, seed, width=8, height=8, noise=0.1):
    """Two well-separated Gaussian blobs in ``width * height`` dimensions.

    Returns ``(samples, membership, means)`` with membership in {0, 1}.
    """
    rng = np.random.default_rng(seed)
    means = [smooth_image(np.random.default_rng(1000 + j), width, height) for j in (0, 1)]
    # keep the two means well apart
    means[1] = np.roll(means[1].reshape(height, width), (height // 2, width // 2), axis=(0, 1)).ravel()
    member = np.arange(n) % 2
    X = np.array([means[m] for m in member]) + noise * rng.standard_normal((n, width * height))
    return X, member, np.array(means)
