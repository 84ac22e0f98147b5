import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mothnet.network import NetworkTemplate, generate_instance, mb_forward
from mothnet.plasticity import (
    PlasticityParams,
    apply_rails,
    hebbian_growth,
    inactive_decay,
    train_on_presentation,
)
from mothnet.sde import make_rng

SMALL = NetworkTemplate(n_features=10, mb_ratio=6, n_classes=4)


def test_growth_examples():
    assert hebbian_growth(0.3, 2.0, 1.0, 0.5) == 1.0
    assert hebbian_growth(0.3, 0.0, 5.0, 0.5) == 0.0
    assert np.all(hebbian_growth(None, np.arange(4.0), np.ones(4), 0.0) == 0)


def test_decay_examples():
    assert inactive_decay(0.4, 0.0, 1.0, 0.1) == pytest.approx(-0.04)
    assert inactive_decay(0.4, 0.2, 1.0, 0.1) == 0.0
    assert inactive_decay(0.0, 0.0, 0.0, 0.1) == 0.0
    # threshold counts as silent
    assert inactive_decay(1.0, 0.05, 1.0, 0.5, threshold=0.05) == -0.5


def test_rails_examples():
    assert apply_rails(0.95, 0.1, 1.0) == 1.0
    assert apply_rails(0.02, -0.05) == 0.0
    assert apply_rails(0.37, 0.0) == 0.37


def test_params_validation():
    with pytest.raises(ValueError):
        PlasticityParams(delta_post=1.0)
    with pytest.raises(ValueError):
        PlasticityParams(gamma_post=float("inf"))
    p = PlasticityParams.from_template(NetworkTemplate(goal=2.0, growth_rate_post=4.0,
                                                       decay_rate_post=0.5))
    assert (p.gamma_post, p.delta_post) == (2.0, 0.25)


def _rates(inst, seed):
    rng = make_rng(seed)
    t = inst.template
    al = rng.random(t.n_features)
    mb = mb_forward(al, inst, 0.2)
    en = rng.random(t.n_classes)
    return al, mb, en


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 3), st.floats(0, 50), st.floats(0, 0.99),
       st.floats(0, 2))
def test_and_gate_rails_and_isolation(seed, cls, gamma, delta, gamma_pre):
    inst = generate_instance(SMALL, seed % 1000)
    inst.w_mb_en = make_rng(seed).random(inst.w_mb_en.shape) * SMALL.weight_max
    al, mb, en = _rates(inst, seed)
    before = inst.copy()
    params = PlasticityParams(gamma_pre, gamma, delta, SMALL.weight_max)
    train_on_presentation(inst, al, mb, en, cls, params)
    row = inst.en_row(cls)

    # class isolation: other rows bit-identical
    others = np.arange(SMALL.n_classes) != row
    assert np.array_equal(inst.w_mb_en[others], before.w_mb_en[others])
    # AND-gate: MB units zeroed by k-WTA never grow
    silent = mb == 0
    assert np.all(inst.w_mb_en[row, silent] <= before.w_mb_en[row, silent])
    # rails everywhere
    for w in (inst.w_mb_en, inst.w_al_mb):
        assert w.min() >= 0 and w.max() <= SMALL.weight_max
    # connectivity pattern of AL->MB fixed
    assert np.array_equal(inst.w_al_mb != 0, before.w_al_mb != 0) or gamma_pre > 0
    assert np.all(inst.w_al_mb[~inst.al_mb_mask] == 0)


def test_gamma_pre_zero_leaves_al_mb_untouched():
    inst = generate_instance(SMALL, 0)
    before = inst.w_al_mb.copy()
    al, mb, en = _rates(inst, 1)
    train_on_presentation(inst, al, mb, en, 2, PlasticityParams(gamma_pre=0.0))
    assert np.array_equal(inst.w_al_mb, before)


def test_gamma_pre_grows_only_on_pattern():
    inst = generate_instance(SMALL, 0)
    before = inst.w_al_mb.copy()
    al, mb, en = _rates(inst, 1)
    train_on_presentation(inst, al, mb, en, 0, PlasticityParams(gamma_pre=0.01))
    grown = inst.w_al_mb - before
    assert np.all(grown[~inst.al_mb_mask] == 0)
    expected = np.minimum(before + 0.01 * np.outer(mb, al), SMALL.weight_max)
    assert np.allclose(inst.w_al_mb[inst.al_mb_mask], expected[inst.al_mb_mask])


def test_update_locality():
    # perturbing weights in unrelated rows/columns does not change an entry's update
    inst = generate_instance(SMALL, 5)
    al, mb, en = _rates(inst, 2)
    a, b = inst.copy(), inst.copy()
    b.w_mb_en[:, ::2] = 0.9
    row = inst.en_row(1)
    params = PlasticityParams(0.0, 0.7, 0.3)
    train_on_presentation(a, al, mb, en, 1, params)
    train_on_presentation(b, al, mb, en, 1, params)
    odd = np.arange(1, SMALL.n_mb, 2)
    assert np.array_equal(a.w_mb_en[row, odd], b.w_mb_en[row, odd])


def test_repetition_saturates_and_decays_geometrically():
    # Closed form: an active weight grows by gamma*f_mb*f_en per exposure until
    # the rail; a silent one shrinks as w0 * (1 - delta)**n.
    inst = generate_instance(SMALL, 0)
    rng = make_rng(3)
    al = rng.random(SMALL.n_features)
    mb = np.where(rng.random(SMALL.n_mb) < 0.2, rng.uniform(0.3, 1.0, SMALL.n_mb), 0.0)
    en = np.full(SMALL.n_classes, 0.5)
    params = PlasticityParams(0.0, 0.4, 0.2, SMALL.weight_max)
    row = inst.en_row(0)
    w0 = inst.w_mb_en[row].copy()
    active = mb > 0
    n = 60
    for _ in range(n):
        train_on_presentation(inst, al, mb, en, 0, params)
    w = inst.w_mb_en[row]
    steps_to_rail = np.ceil((SMALL.weight_max - w0[active]) / (0.4 * mb[active] * 0.5))
    assert np.all(steps_to_rail <= n)
    assert np.all(w[active] == SMALL.weight_max)
    assert np.allclose(w[~active], w0[~active] * 0.8 ** n, rtol=1e-12, atol=0)


def test_unknown_class():
    inst = generate_instance(SMALL, 0)
    al, mb, en = _rates(inst, 0)
    with pytest.raises(ValueError):
        train_on_presentation(inst, al, mb, en, 4, PlasticityParams())
