"""Class predictions from EN readouts.

Two rules are provided: a softmax over raw responses (equivalent to picking
the strongest EN) and a summed fourth-power deviation score against per-(EN,
class) response statistics fitted on a reference set.  All ties go to the
lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-4


@dataclass(frozen=True)
class ResponseStats:
    mu: np.ndarray  # (n_en, n_classes); mu[i, j] = mean of EN i on class j
    sigma: np.ndarray  # same shape, floored
    reference_set_size: np.ndarray  # samples per class


def fit_stats(responses, labels, n_classes: int | None = None,
              sigma_floor: float = SIGMA_FLOOR) -> ResponseStats:
    """Per-(EN, class) sample mean and sample (n-1) standard deviation."""
    E = np.atleast_2d(np.asarray(responses, dtype=float))
    y = np.asarray(labels, dtype=int)
    n_classes = n_classes or E.shape[1]
    counts = np.bincount(y, minlength=n_classes)
    missing = np.flatnonzero(counts < 2)
    if missing.size:
        raise ValueError(f"classes {missing.tolist()} have fewer than 2 records")
    mu = np.empty((E.shape[1], n_classes))
    sigma = np.empty_like(mu)
    for j in range(n_classes):
        block = E[y == j]
        mu[:, j] = block.mean(axis=0)
        sigma[:, j] = block.std(axis=0, ddof=1)
    return ResponseStats(mu, np.maximum(sigma, sigma_floor), counts)


def fit_stats_from_records(records, n_classes: int, sigma_floor: float = SIGMA_FLOOR):
    E = np.array([r.responses for r in records])
    y = np.array([r.sample_class for r in records])
    return fit_stats(E, y, n_classes, sigma_floor)


def softmax_predict(responses):
    """Return ``(label, probabilities)``; works row-wise on a 2-D input."""
    E = np.asarray(responses, dtype=float)
    z = np.exp(E - E.max(axis=-1, keepdims=True))
    p = z / z.sum(axis=-1, keepdims=True)
    label = np.argmax(E, axis=-1)  # argmax returns the first maximum
    return (int(label) if E.ndim == 1 else label), p


def loglik_scores(responses, stats: ResponseStats) -> np.ndarray:
    """``score[..., j] = sum_i ((E_i - mu_ij) / sigma_ij) ** 4``."""
    E = np.asarray(responses, dtype=float)[..., :, None]
    z2 = np.square((E - stats.mu) / stats.sigma)  # squaring twice keeps +d and -d identical
    return (z2 * z2).sum(axis=-2)


def loglik_predict(responses, stats: ResponseStats):
    scores = loglik_scores(responses, stats)
    label = np.argmin(scores, axis=-1)
    return (int(label) if scores.ndim == 1 else label), scores


def accuracy(predicted, labels) -> float:
    predicted = np.asarray(predicted)
    return float(np.mean(predicted == np.asarray(labels))) if predicted.size else float("nan")


def confusion_matrix(predicted, labels, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(labels, dtype=int), np.asarray(predicted, dtype=int)), 1)
    return cm
