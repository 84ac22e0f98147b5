"""Three-stage experiments, learning metrics, sweeps and the k-NN baseline.

Seeding
-------
Every instance in a sweep gets ``child_seed(master, axis, value, index)``:
the first 8 bytes (little-endian) of a BLAKE2b digest of those four items.
Adding sweep values therefore never changes the numbers of existing points.
A child seed is split with ``SeedSequence.spawn`` into independent streams
for instance generation, pool drawing and simulation noise.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .classifiers import (
    SIGMA_FLOOR,
    ResponseStats,
    accuracy,
    confusion_matrix,
    fit_stats,
    loglik_predict,
    softmax_predict,
)
from .dataset import FeatureDataset, Pool, Pools, draw_experiment_pools
from .network import (
    NetworkInstance,
    NetworkTemplate,
    generate_instance,
    present_batch,
    present_sample,
)
from .plasticity import PlasticityParams, train_on_presentation
from .sde import make_rng

CLASSIFIERS = ("softmax", "loglik")

# Sweep axes that are not plain template fields.
SPECIAL_AXES = ("n_train_per_class", "sparsity")


@dataclass(frozen=True)
class ExperimentConfig:
    template: NetworkTemplate = field(default_factory=NetworkTemplate)
    n_train_per_class: int = 10
    n_instances: int = 13
    classifier: str = "both"
    sweep_axis: tuple | None = None  # (name, values)
    master_seed: int = 0
    n_baseline: int = 15
    n_validation: int = 15
    holdout: bool = False  # score post-training stats on a disjoint pool
    knn_baseline: bool = True

    def __post_init__(self):
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")
        if self.classifier not in CLASSIFIERS + ("both",):
            raise ValueError(f"unknown classifier {self.classifier!r}")
        if self.n_train_per_class < 0:
            raise ValueError("n_train_per_class must be >= 0")


@dataclass
class InstanceResult:
    seed: int
    baseline_acc: dict
    post_acc: dict
    learning_focus: float
    snr: float
    knn_acc: float = float("nan")
    confusion: dict = field(default_factory=dict)
    lf_per_class: np.ndarray | None = None


@dataclass
class ExperimentResult:
    axis: str | None
    value: object
    instances: list

    def values(self, metric: str, classifier: str = "loglik") -> np.ndarray:
        if metric in ("baseline_acc", "post_acc"):
            return np.array([getattr(r, metric)[classifier] for r in self.instances])
        return np.array([getattr(r, metric) for r in self.instances])

    def mean(self, metric="post_acc", classifier="loglik") -> float:
        return float(np.mean(self.values(metric, classifier)))

    def std(self, metric="post_acc", classifier="loglik") -> float:
        v = self.values(metric, classifier)
        return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def child_seed(master_seed: int, axis: str | None, value, index: int) -> int:
    key = f"{int(master_seed)}|{axis}|{value!r}|{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


# -- metrics -----------------------------------------------------------------

def compute_learning_focus(stats: ResponseStats, per_class: bool = False):
    """Mean standardized separation of each EN's trained class from controls.

    ``mu[j, j]`` is EN_j on its trained class, ``mu[j, i]`` on control class i.
    Each trained class averages over its ``n_classes - 1`` controls; the
    return value is the grand mean over trained classes.
    """
    mu, sigma = stats.mu, stats.sigma
    n = mu.shape[1]
    diag_mu = np.diag(mu)[:, None]
    diag_sigma = np.diag(sigma)[:, None]
    terms = (diag_mu - mu) / (0.5 * (diag_sigma + sigma))
    off = ~np.eye(n, dtype=bool)
    lf_j = np.where(off, terms, 0.0).sum(axis=1) / (n - 1)
    return (float(lf_j.mean()), lf_j) if per_class else float(lf_j.mean())


def compute_snr(responses, labels, n_classes: int | None = None,
                sigma_floor: float = SIGMA_FLOOR) -> float:
    """Mean over (EN, class) of response mean / floored response std."""
    stats = fit_stats(responses, labels, n_classes, sigma_floor)
    return float(np.mean(stats.mu / stats.sigma))


# -- protocol ----------------------------------------------------------------

def _score(responses, labels, n_classes, which, stats=None):
    out, cms = {}, {}
    if which in ("softmax", "both"):
        pred, _ = softmax_predict(responses)
        out["softmax"] = accuracy(pred, labels)
        cms["softmax"] = confusion_matrix(pred, labels, n_classes)
    if which in ("loglik", "both"):
        stats = stats or fit_stats(responses, labels, n_classes)
        pred, _ = loglik_predict(responses, stats)
        out["loglik"] = accuracy(pred, labels)
        cms["loglik"] = confusion_matrix(pred, labels, n_classes)
    return out, cms


def train_instance(instance: NetworkInstance, training: Pool, rng) -> None:
    """Stage 2: every sample, ``n_sniffs`` times, octopamine and plasticity on."""
    t = instance.template
    params = PlasticityParams.from_template(t)
    for x, y in zip(training.features, training.labels):
        for _ in range(t.n_sniffs):
            _, mb, al, en = present_sample(x, instance, t.octopamine_level, rng, int(y), "training")
            train_on_presentation(instance, al, mb, en, int(y), params)


def run_stage_protocol(instance: NetworkInstance, pools: Pools, config: ExperimentConfig,
                       rng, holdout: Pool | None = None) -> InstanceResult:
    t = instance.template
    n_classes = t.n_classes

    base = present_batch(pools.baseline.features, instance, 0.0, rng)
    baseline_acc, _ = _score(base.responses, pools.baseline.labels, n_classes, config.classifier)

    train_instance(instance, pools.training, rng)

    val = present_batch(pools.validation.features, instance, 0.0, rng)
    stats = fit_stats(val.responses, pools.validation.labels, n_classes)
    if holdout is not None:
        test = present_batch(holdout.features, instance, 0.0, rng)
        post_acc, cms = _score(test.responses, holdout.labels, n_classes, config.classifier, stats)
    else:
        post_acc, cms = _score(val.responses, pools.validation.labels, n_classes,
                               config.classifier, stats)
    lf, lf_j = compute_learning_focus(stats, per_class=True)
    snr = compute_snr(val.responses, pools.validation.labels, n_classes)
    return InstanceResult(0, baseline_acc, post_acc, lf, snr, confusion=cms, lf_per_class=lf_j)


def instance_pools(dataset: FeatureDataset, config: ExperimentConfig, seed: int):
    """The ``(pools, holdout)`` pair used by the instance with this seed."""
    pool_ss = np.random.SeedSequence(seed).spawn(3)[1]
    pool_seed = int(pool_ss.generate_state(1, np.uint64)[0])
    n_extra = config.n_validation if config.holdout else 0
    pools = draw_experiment_pools(dataset, config.n_train_per_class + n_extra,
                                  config.n_baseline, config.n_validation, pool_seed)
    if config.holdout:
        return _split_holdout(pools, config.n_train_per_class, n_extra)
    return pools, None


def run_instance(dataset: FeatureDataset, config: ExperimentConfig, seed: int) -> InstanceResult:
    """Generate, train and score one moth from ``seed``."""
    gen_ss, _, sim_ss = np.random.SeedSequence(seed).spawn(3)
    instance = generate_instance(config.template, gen_ss)
    instance.seed = seed
    pools, holdout = instance_pools(dataset, config, seed)
    result = run_stage_protocol(instance, pools, config, make_rng(sim_ss), holdout)
    result.seed = seed
    if config.knn_baseline and config.n_train_per_class > 0:
        result.knn_acc = nearest_neighbor_baseline(pools.training, pools.validation)
    return result


def _split_holdout(pools: Pools, n_train: int, n_holdout: int):
    """Carve a per-class holdout pool out of an oversized training pool."""
    tr = pools.training
    keep, hold = [], []
    seen: dict[int, int] = {}
    for row, y in enumerate(tr.labels):
        c = seen.get(int(y), 0)
        (hold if c < n_holdout else keep).append(row)
        seen[int(y)] = c + 1
    keep, hold = np.array(keep, dtype=int), np.array(hold, dtype=int)
    hold = hold[np.argsort(tr.labels[hold], kind="stable")]
    sub = lambda p, r: Pool(p.features[r], p.labels[r], p.ids[r])  # noqa: E731
    return Pools(pools.baseline, sub(tr, keep), pools.validation), sub(tr, hold)


# -- sweeps ------------------------------------------------------------------

def config_for_value(config: ExperimentConfig, axis: str | None, value) -> ExperimentConfig:
    if axis is None:
        return config
    if axis == "n_train_per_class":
        return replace(config, n_train_per_class=int(value))
    if axis == "sparsity":
        t = replace(config.template, sparsity_fraction=float(value),
                    sparsity_fraction_training=float(value))
        return replace(config, template=t)
    if axis not in NetworkTemplate.field_types():
        raise ValueError(f"unknown sweep axis {axis!r}")
    kind = NetworkTemplate.field_types()[axis]
    return replace(config, template=replace(config.template, **{axis: kind(value)}))


def _job(args):
    dataset, config, seed = args
    return run_instance(dataset, config, seed)


def run_sweep(dataset: FeatureDataset, config: ExperimentConfig,
              workers: int = 1) -> list[ExperimentResult]:
    """One :class:`ExperimentResult` per sweep value (a single one without an axis).

    Results are merged in (value, instance) order, so the worker count never
    changes the output.
    """
    axis, values = config.sweep_axis if config.sweep_axis else (None, [None])
    jobs, keys = [], []
    for value in values:
        cfg = config_for_value(config, axis, value)
        for i in range(config.n_instances):
            jobs.append((dataset, cfg, child_seed(config.master_seed, axis, value, i)))
            keys.append(value)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outputs = list(pool.map(_job, jobs, chunksize=1))
    else:
        outputs = [_job(j) for j in jobs]
    results = []
    for value in values:
        results.append(ExperimentResult(axis, value,
                                        [o for k, o in zip(keys, outputs) if k == value]))
    return results


def pooled_std(results: Sequence[ExperimentResult], metric="post_acc",
               classifier="loglik") -> float:
    """Square root of the mean within-point variance."""
    return math.sqrt(np.mean([r.std(metric, classifier) ** 2 for r in results]))


# -- nearest neighbours --------------------------------------------------------

def knn_k(n_train_per_class: int) -> int:
    return 1 if n_train_per_class <= 10 else 3


def nearest_neighbor_baseline(train: Pool, test: Pool, k: int | None = None,
                              return_predictions: bool = False):
    """z-scored Euclidean k-NN.

    Distance ties go to the lower training index; vote ties to the lowest
    class label.
    """
    X, y = np.asarray(train.features, dtype=float), np.asarray(train.labels, dtype=int)
    if X.size == 0 or np.asarray(test.features).size == 0:
        raise ValueError("empty pool")
    n_classes = int(max(y.max(), np.max(test.labels)) + 1)
    empty = np.flatnonzero(np.bincount(y, minlength=n_classes) == 0)
    if empty.size:
        raise ValueError(f"classes {empty.tolist()} missing from the training pool")
    if k is None:
        k = knn_k(int(np.bincount(y).min()))
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Xz = (X - mean) / std
    Tz = (np.asarray(test.features, dtype=float) - mean) / std
    d2 = ((Tz[:, None, :] - Xz[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    votes = np.zeros((len(Tz), n_classes), dtype=int)
    np.add.at(votes, (np.repeat(np.arange(len(Tz)), k), y[nearest].ravel()), 1)
    pred = np.argmax(votes, axis=1)
    acc = accuracy(pred, test.labels)
    return (acc, pred) if return_predictions else acc


# -- timecourses -------------------------------------------------------------

def emit_timecourses(naive: NetworkInstance, trained: NetworkInstance, validation: Pool,
                     rng) -> list[dict]:
    """Per-EN responses to the class-ordered validation digits, pre and post.

    Post-training traces are divided by the EN's mean response to its own
    trained class.  One row per (phase, EN class, digit).
    """
    order = np.argsort(validation.labels, kind="stable")
    X, y = validation.features[order], validation.labels[order]
    rows = []
    for phase, inst in (("pre", naive), ("post", trained)):
        E = present_batch(X, inst, 0.0, rng).responses
        norm = np.ones(E.shape[1])
        if phase == "post":
            norm = np.array([E[y == j, j].mean() for j in range(E.shape[1])])
            norm = np.where(norm > 0, norm, 1.0)
        for j in range(E.shape[1]):
            for pos, (cls, val) in enumerate(zip(y, E[:, j] / norm[j])):
                rows.append({"phase": phase, "en_class": j, "position": pos,
                             "digit_class": int(cls), "response": float(val)})
    return rows
