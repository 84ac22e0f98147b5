import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mothnet.classifiers import (
    SIGMA_FLOOR,
    ResponseStats,
    accuracy,
    confusion_matrix,
    fit_stats,
    loglik_predict,
    loglik_scores,
    softmax_predict,
)


def test_fit_stats_examples():
    E = np.array([[3.0, 0.0], [3.0, 2.0], [1.0, 5.0], [1.0, 5.0]])
    y = np.array([0, 0, 1, 1])
    s = fit_stats(E, y, 2)
    assert s.mu[0, 0] == 3.0 and s.sigma[0, 0] == SIGMA_FLOOR
    assert s.mu[1, 0] == 1.0 and s.sigma[1, 0] == pytest.approx(np.sqrt(2))
    assert list(s.reference_set_size) == [2, 2]
    perm = np.array([3, 1, 0, 2])
    s2 = fit_stats(E[perm], y[perm], 2)
    assert np.array_equal(s.mu, s2.mu) and np.array_equal(s.sigma, s2.sigma)


def test_fit_stats_needs_two_per_class():
    with pytest.raises(ValueError, match=r"\[1\]"):
        fit_stats(np.ones((3, 2)), np.array([0, 0, 1]), 2)
    with pytest.raises(ValueError):
        fit_stats(np.ones((4, 3)), np.array([0, 0, 1, 1]), 3)


def test_softmax_examples():
    label, p = softmax_predict(np.full(10, 0.3))
    assert label == 0 and np.allclose(p, 0.1)
    e = np.zeros(10)
    e[7] = 5
    assert softmax_predict(e)[0] == 7
    mpmath.mp.dps = 40
    e = np.zeros(10)
    e[:2] = (2, 1)
    _, p = softmax_predict(e)
    z = mpmath.e ** 2 + mpmath.e + 8
    assert p[0] == pytest.approx(float(mpmath.e ** 2 / z), rel=1e-14)
    assert p[1] == pytest.approx(float(mpmath.e / z), rel=1e-14)
    assert p[5] == pytest.approx(float(1 / z), rel=1e-14)


def test_softmax_stable_for_large_inputs():
    label, p = softmax_predict(np.array([1000.0, 1001.0, -1e6]))
    assert label == 1 and np.isfinite(p).all() and p.sum() == pytest.approx(1)


def test_loglik_examples():
    stats = ResponseStats(np.array([[0.0, 1.0], [1.0, 0.0]]), np.ones((2, 2)), np.array([2, 2]))
    label, scores = loglik_predict(np.array([0.0, 1.0]), stats)
    assert label == 0 and list(scores) == [0.0, 2.0]
    mu = np.array([[0.2, 0.5, 0.9], [0.3, 0.1, 0.4]])
    stats = ResponseStats(mu, np.full((2, 3), 0.1), np.array([2, 2, 2]))
    for j in range(3):
        label, scores = loglik_predict(mu[:, j], stats)
        assert label == j and scores[j] == 0 and np.all(np.delete(scores, j) > 0)


def test_ties_go_to_lowest_class():
    stats = ResponseStats(np.array([[1.0, 1.0, 0.0]]), np.ones((1, 3)), np.array([2, 2, 2]))
    assert loglik_predict(np.array([1.0]), stats)[0] == 0
    assert softmax_predict(np.array([0.1, 0.4, 0.4]))[0] == 1


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=10_000, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=finite), finite)
def test_softmax_argmax_invariance(e, shift):
    label, p = softmax_predict(e)
    assert label == int(np.argmax(e))
    assert p.sum() == pytest.approx(1.0)
    shifted = e + shift
    if np.argmax(shifted) == np.argmax(e):  # float rounding can merge near-ties
        assert softmax_predict(shifted)[0] == label


@settings(max_examples=10_000, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6), st.integers(2, 6))
def test_loglik_scale_invariance(seed, n_en, n_classes):
    rng = np.random.default_rng(seed)
    mu = rng.random((n_en, n_classes))
    sigma = rng.random((n_en, n_classes)) + 0.05
    e = rng.random(n_en)
    c = np.exp(rng.uniform(-3, 3, n_en))
    base = loglik_scores(e, ResponseStats(mu, sigma, None))
    scaled = loglik_scores(e * c, ResponseStats(mu * c[:, None], sigma * c[:, None], None))
    assert np.allclose(scaled, base, rtol=1e-9, atol=1e-12)


@given(st.floats(0.001, 10), st.floats(0.001, 10))
def test_fourth_power_symmetric_and_increasing(d1, d2):
    stats = ResponseStats(np.zeros((1, 1)), np.ones((1, 1)), None)
    s = lambda d: loglik_scores(np.array([d]), stats)[0]  # noqa: E731
    assert s(d1) == s(-d1)
    if d1 < d2:
        assert s(d1) < s(d2)


def test_batch_and_metrics():
    stats = ResponseStats(np.eye(3), np.ones((3, 3)), None)
    labels, _ = loglik_predict(np.eye(3)[[2, 0, 1]], stats)
    assert list(labels) == [2, 0, 1]
    assert accuracy(labels, [2, 0, 0]) == pytest.approx(2 / 3)
    cm = confusion_matrix(labels, [2, 0, 0], 3)
    assert cm[0, 1] == 1 and cm.sum() == 3
