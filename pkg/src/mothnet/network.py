"""MothNet instances: antennal lobe -> mushroom body -> extrinsic neurons.

A :class:`NetworkTemplate` holds every architectural and learning
hyperparameter.  Its field defaults below are the single documented source
of model defaults; the CLI config file and ``--set`` flags override them.

Layers
------
AL  one noisy firing-rate unit per input feature, dense uniform lateral
    inhibition, optional uniform octopamine drive.  Integrated with
    :mod:`mothnet.sde`.
MB  ``mb_ratio * n_features`` units; drive is ``w_al_mb @ al_rates`` through a
    sigmoid, then exact k-winners-take-all.
EN  one readout per class; ``S_en(w_mb_en[e] @ mb_rates)``.  The EN sigmoid
    is expressed per active MB unit (``en_slope``, ``en_offset``) and scaled
    by a winner count ``k_ref``.  By default ``k_ref`` is the number of MB
    winners at ``sparsity_fraction``, so the EN operating point does not move
    when the sparsity level changes.  A nonzero ``en_reference_sparsity``
    pins ``k_ref`` to that fraction instead; EN drive then grows with the
    number of active MB units.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .sde import SdeParams, SigmoidParams, make_rng, sigmoid, simulate_window

FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkTemplate:
    # architecture
    n_features: int = 85
    mb_ratio: int = 30
    n_classes: int = 10
    al_lateral_inhibition_strength: float = 0.0  # total inhibition from a fully active AL
    al_mb_connection_prob: float = 0.15
    weight_init_low: float = 0.1  # AL->MB uniform init range
    weight_init_high: float = 0.3
    en_init_weight: float = 0.1  # every MB->EN weight at generation
    weight_max: float = 1.0  # upper rail of every plastic weight

    # sparsity (fraction of MB units left active by k-WTA)
    sparsity_fraction: float = 0.1
    sparsity_fraction_training: float = 0.1

    # octopamine
    octopamine_level: float = 0.1
    octopamine_stimulates_mb: bool = False

    # noise and time scale (simulation time units)
    noise_amplitude_al: float = 0.1
    tau: float = 1.0
    dt: float = 0.05
    presentation_duration: float = 2.0
    readout_duration: float = 1.0

    # sigmoids
    al_max_rate: float = 1.0
    al_slope: float = 40.0
    al_offset: float = 0.16
    mb_max_rate: float = 1.0
    mb_slope: float = 17.0
    mb_offset: float = 0.35
    en_max_rate: float = 1.0
    en_slope: float = 10.0  # per active MB unit, see module docstring
    en_offset: float = 0.4
    en_reference_sparsity: float = 0.0  # 0 = follow sparsity_fraction
    silence_threshold: float = 0.02  # EN rate counted as silent

    # learning (rates are per exposure at goal == reference_goal)
    growth_rate_pre: float = 0.0
    growth_rate_post: float = 5.0
    decay_rate_post: float = 0.9
    activity_threshold: float = 0.0
    goal: float = 1.0
    reference_goal: float = 1.0
    n_sniffs: int = 1

    def __post_init__(self):
        if self.n_features < 1 or self.mb_ratio < 1 or self.n_classes < 2:
            raise ValueError("n_features, mb_ratio >= 1 and n_classes >= 2 required")
        if not 0 <= self.en_reference_sparsity <= 1:
            raise ValueError("en_reference_sparsity must lie in [0, 1]")
        for name in ("sparsity_fraction", "sparsity_fraction_training"):
            v = getattr(self, name)
            if not 0 < v <= 0.5:
                raise ValueError(f"{name}={v} must lie in (0, 0.5]")
        if not 0 <= self.al_mb_connection_prob <= 1:
            raise ValueError("al_mb_connection_prob must lie in [0, 1]")
        if not 0 <= self.weight_init_low <= self.weight_init_high:
            raise ValueError("need 0 <= weight_init_low <= weight_init_high")
        if self.weight_max <= self.weight_init_high or self.weight_max < self.en_init_weight:
            raise ValueError("weight_max must exceed the initial weights")
        if self.goal <= 0 or self.reference_goal <= 0:
            raise ValueError("goal and reference_goal must be positive")
        if self.n_sniffs < 1:
            raise ValueError("n_sniffs must be >= 1")
        for name in ("octopamine_level", "noise_amplitude_al", "al_lateral_inhibition_strength",
                     "growth_rate_pre", "growth_rate_post", "decay_rate_post"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.effective_decay_post >= 1:
            raise ValueError(
                f"effective decay rate {self.effective_decay_post} must be < 1; raise goal"
            )
        if self.readout_duration > self.presentation_duration:
            raise ValueError("readout window longer than the presentation")
        SdeParams(self.tau, self.dt, self.noise_amplitude_al)

    @property
    def n_mb(self) -> int:
        return self.mb_ratio * self.n_features

    @property
    def learning_scale(self) -> float:
        return self.reference_goal / self.goal

    @property
    def effective_growth_pre(self) -> float:
        return self.growth_rate_pre * self.learning_scale

    @property
    def effective_growth_post(self) -> float:
        return self.growth_rate_post * self.learning_scale

    @property
    def effective_decay_post(self) -> float:
        return self.decay_rate_post * self.learning_scale

    def n_active(self, training: bool = False) -> int:
        rho = self.sparsity_fraction_training if training else self.sparsity_fraction
        return n_winners(rho, self.n_mb)

    def sde_params(self) -> SdeParams:
        return SdeParams(self.tau, self.dt, self.noise_amplitude_al)

    def al_sigmoid(self) -> SigmoidParams:
        return SigmoidParams(self.al_max_rate, self.al_slope, self.al_offset)

    def mb_sigmoid(self) -> SigmoidParams:
        return SigmoidParams(self.mb_max_rate, self.mb_slope, self.mb_offset)

    def en_sigmoid(self) -> SigmoidParams:
        rho = self.en_reference_sparsity or self.sparsity_fraction
        k = n_winners(rho, self.n_mb)
        return SigmoidParams(self.en_max_rate, self.en_slope / k, self.en_offset * k)

    def with_overrides(self, **kw) -> "NetworkTemplate":
        return replace(self, **kw)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}


# Learner presets.  Only the learning speed differs: "goal" is roughly the
# number of training exposures needed to reach peak accuracy.
LEARNERS = {
    "fast": {"goal": 1.0},
    "natural": {"goal": 15.0},
}


def learner_template(name: str, **overrides) -> NetworkTemplate:
    if name not in LEARNERS:
        raise KeyError(f"unknown learner {name!r}; choose from {sorted(LEARNERS)}")
    return NetworkTemplate(**{**LEARNERS[name], **overrides})


def n_winners(sparsity: float, n: int) -> int:
    # Guard against 0.1 * 2550 = 255.00000000000003 rounding up to 256.
    return max(1, min(n, math.ceil(round(sparsity * n, 9))))


@dataclass
class NetworkInstance:
    template: NetworkTemplate
    w_al_mb: np.ndarray  # (n_mb, n_features)
    al_mb_mask: np.ndarray  # bool, fixed connectivity pattern
    w_mb_en: np.ndarray  # (n_classes, n_mb), row index = EN
    al_inhibition: np.ndarray  # (n_features, n_features), zero diagonal
    en_class_assignment: np.ndarray  # en_class_assignment[class] = EN index
    seed: int

    def copy(self) -> "NetworkInstance":
        return NetworkInstance(
            self.template,
            self.w_al_mb.copy(),
            self.al_mb_mask.copy(),
            self.w_mb_en.copy(),
            self.al_inhibition.copy(),
            self.en_class_assignment.copy(),
            self.seed,
        )

    def en_row(self, cls: int) -> int:
        return int(self.en_class_assignment[cls])


class EnResponseRecord(NamedTuple):
    """EN readouts for one sample, indexed by the class each EN targets."""

    responses: np.ndarray
    sample_class: int
    phase: str


class Presentation(NamedTuple):
    responses: np.ndarray  # (batch, n_classes), class order
    en_rates: np.ndarray  # (batch, n_classes), EN (row) order
    mb_rates: np.ndarray  # (batch, n_mb)
    al_rates: np.ndarray  # (batch, n_features), readout-window mean


def generate_instance(template: NetworkTemplate, seed) -> NetworkInstance:
    """Draw a random moth from ``template``; deterministic given ``seed``."""
    rng = make_rng(seed)
    t = template
    mask = rng.random((t.n_mb, t.n_features)) < t.al_mb_connection_prob
    if not mask.any():
        raise ValueError("template produced an empty AL->MB connectivity")
    w = rng.uniform(t.weight_init_low, t.weight_init_high, size=mask.shape)
    w_al_mb = np.where(mask, w, 0.0)
    if not w_al_mb.any():
        raise ValueError("template produced all-zero AL->MB weights")

    inhibition = np.full((t.n_features, t.n_features),
                         t.al_lateral_inhibition_strength / max(t.n_features - 1, 1))
    np.fill_diagonal(inhibition, 0.0)

    w_mb_en = np.full((t.n_classes, t.n_mb), t.en_init_weight)
    assignment = rng.permutation(t.n_classes)
    return NetworkInstance(t, w_al_mb, mask, w_mb_en, inhibition, assignment,
                           int(seed) if np.isscalar(seed) else 0)


def _check_features(features: np.ndarray, n_features: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[-1] != n_features:
        raise ValueError(f"expected {n_features} features, got {x.shape[-1]}")
    if np.any(x < 0):
        raise ValueError("features must be non-negative")
    return x


def al_forward(
    features: np.ndarray,
    instance: NetworkInstance,
    octopamine: float,
    rng: np.random.Generator | None,
    sde: SdeParams | None = None,
    sig: SigmoidParams | None = None,
) -> np.ndarray:
    """Integrate the AL over one presentation window.

    Returns the trajectory, shape ``(n_steps + 1, n_features)`` for a single
    feature vector or ``(n_steps + 1, batch, n_features)`` for a batch.
    """
    t = instance.template
    single = np.ndim(features) == 1
    x = _check_features(features, t.n_features)
    sde = sde or t.sde_params()
    sig = sig or t.al_sigmoid()
    inh_t = instance.al_inhibition.T
    base = x + octopamine if octopamine > 0 else x

    def drive(_t, state):
        return base - state @ inh_t

    traj = simulate_window(np.zeros_like(x), drive, t.presentation_duration, sde, sig, rng)
    return traj[:, 0, :] if single else traj


def k_winners_take_all(rates: np.ndarray, k: int) -> np.ndarray:
    """Zero all but the ``k`` largest entries of each row.

    Ties at the boundary go to the lowest index (stable sort).
    """
    rates = np.asarray(rates, dtype=float)
    r2 = np.atleast_2d(rates)
    n = r2.shape[1]
    if k >= n:
        return rates.copy()
    order = np.argsort(-r2, axis=1, kind="stable")[:, :k]
    out = np.zeros_like(r2)
    rows = np.arange(r2.shape[0])[:, None]
    out[rows, order] = r2[rows, order]
    return out if rates.ndim == 2 else out[0]


def mb_forward(al_rates: np.ndarray, instance: NetworkInstance, sparsity: float,
               octopamine: float = 0.0) -> np.ndarray:
    t = instance.template
    if not 0 < sparsity <= 1:
        raise ValueError("sparsity must lie in (0, 1]")
    drive = np.asarray(al_rates, dtype=float) @ instance.w_al_mb.T
    if octopamine > 0 and t.octopamine_stimulates_mb:
        drive = drive + octopamine
    rates = sigmoid(drive, t.mb_sigmoid())
    return k_winners_take_all(rates, n_winners(sparsity, t.n_mb))


def en_forward(mb_rates: np.ndarray, instance: NetworkInstance) -> np.ndarray:
    """EN rates in row (EN) order."""
    mb_rates = np.asarray(mb_rates, dtype=float)
    if mb_rates.shape[-1] != instance.template.n_mb:
        raise ValueError("mb_rates length does not match the MB size")
    return sigmoid(mb_rates @ instance.w_mb_en.T, instance.template.en_sigmoid())


def to_class_order(en_rates: np.ndarray, instance: NetworkInstance) -> np.ndarray:
    return np.asarray(en_rates)[..., instance.en_class_assignment]


def present_batch(features: np.ndarray, instance: NetworkInstance, octopamine: float,
                  rng: np.random.Generator | None) -> Presentation:
    """Present every row of ``features`` (simulated side by side)."""
    t = instance.template
    traj = al_forward(np.atleast_2d(features), instance, octopamine, rng)
    n_read = int(np.floor(t.readout_duration / t.dt + 1e-9))
    al_mean = traj[-n_read:].mean(axis=0)
    training = octopamine > 0
    rho = t.sparsity_fraction_training if training else t.sparsity_fraction
    mb = mb_forward(al_mean, instance, rho, octopamine)
    en = en_forward(mb, instance)
    return Presentation(to_class_order(en, instance), en, mb, al_mean)


def present_sample(features: np.ndarray, instance: NetworkInstance, octopamine: float,
                   rng: np.random.Generator | None, sample_class: int = -1,
                   phase: str = "validation"):
    """Present one sample; returns ``(record, mb_rates, al_rates, en_rates)``.

    ``en_rates`` are in EN (row) order, as plasticity needs them.
    """
    p = present_batch(np.asarray(features, dtype=float)[None, :], instance, octopamine, rng)
    record = EnResponseRecord(p.responses[0], sample_class, phase)
    return record, p.mb_rates[0], p.al_rates[0], p.en_rates[0]


# -- serialization ---------------------------------------------------------
#
# An instance is saved as an uncompressed .npz archive.  Every array is
# stored little-endian ('<f8', '<i8', '<u8', '|b1') and the archive carries
# ``format_version`` and the template as a JSON string.

def save_instance(instance: NetworkInstance, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format_version=np.array(FORMAT_VERSION, dtype="<i8"),
            template=np.array(json.dumps(asdict(instance.template), sort_keys=True)),
            w_al_mb=instance.w_al_mb.astype("<f8"),
            al_mb_mask=instance.al_mb_mask.astype("|b1"),
            w_mb_en=instance.w_mb_en.astype("<f8"),
            al_inhibition=instance.al_inhibition.astype("<f8"),
            en_class_assignment=instance.en_class_assignment.astype("<i8"),
            seed=np.array(instance.seed, dtype="<u8"),
        )


def load_instance(path) -> NetworkInstance:
    with np.load(Path(path), allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported instance format version {version}")
        template = NetworkTemplate(**json.loads(str(z["template"])))
        return NetworkInstance(
            template,
            z["w_al_mb"].astype(float),
            z["al_mb_mask"].astype(bool),
            z["w_mb_en"].astype(float),
            z["al_inhibition"].astype(float),
            z["en_class_assignment"].astype(int),
            int(z["seed"]),
        )
