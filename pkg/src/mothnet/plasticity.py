"""Octopamine-gated Hebbian growth with proportional decay and weight rails.

Updates are applied once per training exposure from readout-window mean
rates.  Every update is local: a weight changes only as a function of its
own value and the rates of the two neurons it joins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkInstance, NetworkTemplate


@dataclass(frozen=True)
class PlasticityParams:
    gamma_pre: float = 0.0
    gamma_post: float = 1.0
    delta_post: float = 0.1
    weight_max: float = 1.0
    activity_threshold: float = 0.0

    def __post_init__(self):
        if not 0 <= self.delta_post < 1:
            raise ValueError("delta_post must lie in [0, 1)")
        for g in (self.gamma_pre, self.gamma_post):
            if not (np.isfinite(g) and g >= 0):
                raise ValueError("growth rates must be finite and >= 0")

    @classmethod
    def from_template(cls, t: NetworkTemplate) -> "PlasticityParams":
        return cls(t.effective_growth_pre, t.effective_growth_post, t.effective_decay_post,
                   t.weight_max, t.activity_threshold)


def hebbian_growth(w, f_a, f_b, gamma):
    """``gamma * f_a * f_b``; ``w`` is accepted for a uniform signature."""
    return gamma * np.asarray(f_a) * np.asarray(f_b)


def inactive_decay(w, f_a, f_b, delta, threshold=0.0):
    """``-delta * w`` wherever either endpoint is at or below ``threshold``."""
    silent = (np.asarray(f_a) <= threshold) | (np.asarray(f_b) <= threshold)
    return np.where(silent, -delta * np.asarray(w, dtype=float), 0.0)


def apply_rails(w, delta_w, weight_max=1.0):
    return np.clip(np.asarray(w, dtype=float) + delta_w, 0.0, weight_max)


def train_on_presentation(
    instance: NetworkInstance,
    al_rates: np.ndarray,
    mb_rates: np.ndarray,
    en_rates: np.ndarray,
    target_class: int,
    params: PlasticityParams,
) -> None:
    """Apply one exposure's updates to ``instance`` in place.

    ``en_rates`` are in EN (row) order.  Only the row of the EN assigned to
    ``target_class`` changes post-MB: growth where the MB unit fired, decay
    where it was silent.  AL->MB weights grow on their fixed connectivity
    pattern only.
    """
    n_classes = instance.template.n_classes
    if not 0 <= int(target_class) < n_classes:
        raise ValueError(f"unknown target class {target_class}")

    if params.gamma_pre > 0:
        dw = hebbian_growth(None, mb_rates[:, None], al_rates[None, :], params.gamma_pre)
        grown = apply_rails(instance.w_al_mb, dw * instance.al_mb_mask, params.weight_max)
        instance.w_al_mb = np.where(instance.al_mb_mask, grown, 0.0)

    row = instance.en_row(int(target_class))
    w = instance.w_mb_en[row]
    f_en = en_rates[row]
    active = (mb_rates > params.activity_threshold) & (f_en > params.activity_threshold)
    dw = np.where(active, hebbian_growth(w, mb_rates, f_en, params.gamma_post),
                  inactive_decay(w, mb_rates, f_en, params.delta_post, params.activity_threshold))
    instance.w_mb_en[row] = apply_rails(w, dw, params.weight_max)
