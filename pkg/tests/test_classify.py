import mpmath
import numpy as np
import pytest

from kdclassifier.classify import (
    Classifier,
    class_log_likelihoods,
    empirical_log_priors,
    evaluate,
    metrics_from_predictions,
    posterior,
    posteriors,
    predict,
    predict_batch,
    uniform_log_priors,
)
from kdclassifier.dataset import LabeledImageSet
from kdclassifier.density import VarianceParams, log_mixture
from kdclassifier.errors import ConfigurationError, ShapeError

from conftest import make_model, smooth_image


@pytest.fixture
def toy(ops8):
    rng = np.random.default_rng(21)
    centers = [np.stack([smooth_image(rng) for _ in range(3)]) for _ in range(3)]
    models = tuple(make_model(c, ops8, class_index=m) for m, c in enumerate(centers))
    return Classifier(models, np.log([0.2, 0.5, 0.3]), 8, 8), centers


def test_priors():
    np.testing.assert_allclose(np.exp(empirical_log_priors([0, 0, 1, 2], 3)), [0.5, 0.25, 0.25])
    np.testing.assert_allclose(np.exp(uniform_log_priors(4)), 0.25)
    with pytest.raises(ConfigurationError):
        empirical_log_priors([0, 0], 3)


def test_classifier_validation(ops8, rng):
    m = make_model(smooth_image(rng), ops8)
    with pytest.raises(ConfigurationError):
        Classifier((m, m), np.log([0.5, 0.6]))
    with pytest.raises(ShapeError):
        Classifier((m,), np.log([0.5, 0.5]))


def test_identical_models_uniform_posterior(ops8, rng):
    m = make_model(np.stack([smooth_image(rng) for _ in range(2)]), ops8)
    clf = Classifier((m, m, m, m), uniform_log_priors(4))
    np.testing.assert_allclose(posterior(rng.uniform(size=64), clf), 0.25, atol=1e-15)


def test_two_class_ratio(ops8, rng):
    clf = Classifier(
        (make_model(smooth_image(rng), ops8), make_model(smooth_image(rng), ops8)), uniform_log_priors(2)
    )
    x = rng.uniform(size=64) * 0.1 + clf.models[0].kernels[0].center
    g = log_mixture(x, clf.models[0]) - log_mixture(x, clf.models[1])
    p = posterior(x, clf)
    assert np.log(p[0]) - np.log(p[1]) == pytest.approx(g, abs=1e-9)


def test_three_class_extended_precision(toy):
    clf, centers = toy
    rng = np.random.default_rng(0)
    mpmath.mp.dps = 40
    for _ in range(5):
        x = centers[rng.integers(3)][rng.integers(3)] + 0.2 * rng.normal(size=64)
        ll = class_log_likelihoods(x[None], clf)[0]
        joint = [mpmath.exp(mpmath.mpf(l) + mpmath.mpf(lp)) for l, lp in zip(ll, clf.log_priors)]
        z = mpmath.fsum(joint)
        expected = np.array([float(j / z) for j in joint])
        np.testing.assert_allclose(posterior(x, clf), expected, rtol=0, atol=1e-12)
        assert abs(posterior(x, clf).sum() - 1) < 1e-12


def test_predict_dominant_kernel(toy):
    clf, centers = toy
    assert predict(centers[2][1], clf) == 2


def test_tie_goes_to_lower_index(ops8, rng):
    m = make_model(smooth_image(rng), ops8)
    clf = Classifier((m, m), uniform_log_priors(2))
    assert predict(rng.uniform(size=64), clf) == 0


def test_predict_consistent_with_posterior(toy):
    clf, centers = toy
    rng = np.random.default_rng(5)
    X = centers[0][0] + 0.5 * rng.normal(size=(1000, 64))
    post = posteriors(X, clf)
    np.testing.assert_array_equal(predict_batch(X, clf), np.argmax(post, axis=1))
    assert all(predict(X[i], clf) == np.argmax(post[i]) for i in range(0, 1000, 97))


def test_uniform_priors_reduce_to_likelihood_argmax(toy):
    clf, centers = toy
    flat = Classifier(clf.models, uniform_log_priors(3))
    X = np.random.default_rng(8).uniform(size=(200, 64))
    np.testing.assert_array_equal(predict_batch(X, flat), np.argmax(class_log_likelihoods(X, flat), axis=1))


def test_shift_invariance_of_argmax(toy):
    clf, _ = toy
    X = np.random.default_rng(9).uniform(size=(50, 64))
    scores = class_log_likelihoods(X, clf) + clf.log_priors
    np.testing.assert_array_equal(np.argmax(scores, 1), np.argmax(scores + 1234.5, 1))


def test_prior_monotonicity(toy):
    clf, centers = toy
    X = np.random.default_rng(10).uniform(size=(300, 64))
    base = predict_batch(X, clf)
    for m in range(3):
        boosted = np.exp(clf.log_priors)
        boosted[m] *= 4
        boosted /= boosted.sum()
        pred = predict_batch(X, Classifier(clf.models, np.log(boosted)))
        assert np.all(pred[base == m] == m)


def test_evaluate_perfect(toy):
    clf, centers = toy
    images = np.vstack(centers)
    labels = np.repeat(np.arange(3), 3)
    test = LabeledImageSet(np.clip(images, 0, 1), labels, 8, 8, 3)
    metrics = evaluate(test, clf)
    assert metrics.error_rate == 0.0
    np.testing.assert_array_equal(metrics.confusion, np.diag([3, 3, 3]))
    assert "error_rate\t0.0" in metrics.to_text()


def test_metrics_invariants():
    labels = np.array([0, 0, 1, 1, 2, 2, 2])
    pred = np.array([0, 1, 1, 1, 0, 2, 2])
    m = metrics_from_predictions(labels, pred, 3)
    assert m.confusion.sum() == 7
    assert m.error_rate == pytest.approx(1 - np.trace(m.confusion) / 7)
    np.testing.assert_allclose(m.per_class_error, [0.5, 0.0, 1 / 3])


def test_threaded_evaluation_matches(toy):
    clf, _ = toy
    X = np.random.default_rng(3).uniform(size=(40, 64))
    np.testing.assert_array_equal(posteriors(X, clf, threads=3), posteriors(X, clf))


def test_isotropic_swap_keeps_kernels(toy):
    clf, _ = toy
    iso = clf.with_variances(VarianceParams(0.9, 0.9))
    assert [m.sample_ids for m in iso.models] == [m.sample_ids for m in clf.models]
    np.testing.assert_array_equal(iso.models[1].weights, clf.models[1].weights)
