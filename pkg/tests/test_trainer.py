import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltnzsl import trainer as tr
from ltnzsl.autodiff import Tensor
from ltnzsl.data import Batch, generate_synthetic, sample_batch
from ltnzsl.errors import ConfigurationError, DivergenceError
from ltnzsl.fol import builtin_axioms
from ltnzsl.fuzzy import FuzzyConfig
from ltnzsl.grounding import ground_is_of_class, ground_is_of_class_masked
from ltnzsl.trainer import (AdamState, KBEntry, KnowledgeBase, TrainConfig, TrainHistory, batch_env, build_kb,
                            init_model, kb_loss, lr_schedule, optimizer_step, preset, train)

logging.getLogger("ltnzsl").setLevel(logging.ERROR)


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(4, 2, 8, 6, 10, noise_std=0.1, seed=3, n_macros=2)


@pytest.fixture(scope="module")
def noiseless():
    return generate_synthetic(4, 2, 8, 6, 10, noise_std=0.0, seed=3, n_macros=2)


def quick(**kw):
    base = dict(alpha=4.0, k_mask=2, n_pos=4, n_neg=4, epochs=3, lr_pretrain=0.05, weight_decay=1e-3,
                p_schedule=dict(initial_p=1, step=0, cap=1), seed=0)
    base.update(kw)
    return TrainConfig(**base)


def kb_of(values, p=2.0):
    return KnowledgeBase([KBEntry(f"a{i}", None, Tensor(v)) for i, v in enumerate(values)], FuzzyConfig(p, p))


# knowledge base

def test_build_kb_six_axioms_with_hierarchy(small):
    cfg = quick()
    params = init_model(small, cfg)
    rng = np.random.default_rng(0)
    kb = build_kb(sample_batch(small, cfg.batch_spec, rng), builtin_axioms(), params, cfg, rng, small)
    assert [e.name for e in kb.entries] == [f"phi{i}" for i in range(1, 7)]
    assert kb.mask is not None and int((kb.mask == 0).sum()) == 2
    assert all(0.0 < e.truth.item() < 1.0 for e in kb.entries)


def test_build_kb_without_hierarchy_drops_phi2():
    ds = generate_synthetic(4, 2, 8, 6, 10, seed=3)
    cfg = quick()
    axioms = tr.select_axioms(None, cfg, has_hierarchy=False)
    assert "phi2" not in [a.name for a in axioms]
    rng = np.random.default_rng(0)
    kb = build_kb(sample_batch(ds, cfg.batch_spec, rng), axioms, init_model(ds, cfg), cfg, rng, ds)
    assert "phi2" not in kb.truths()


def test_phi2_without_hierarchy_is_configuration_error():
    ds = generate_synthetic(4, 2, 8, 6, 10, seed=3)
    with pytest.raises(ConfigurationError):
        train(ds, None, quick(axioms=["phi1", "phi2"]))
    cfg = quick()
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        build_kb(sample_batch(ds, cfg.batch_spec, rng), builtin_axioms(), init_model(ds, cfg), cfg, rng, ds)


def test_single_class_batch_excludes_phi4(small):
    cfg = quick(n_neg=0)
    rng = np.random.default_rng(1)
    kb = build_kb(sample_batch(small, cfg.batch_spec, rng), builtin_axioms(), init_model(small, cfg), cfg, rng, small)
    assert "phi4" in kb.vacuous and "phi4" not in kb.truths()
    assert 0.0 <= kb_loss(kb).item() <= 1.0


def test_unknown_axiom_name(small):
    with pytest.raises(ConfigurationError):
        train(small, None, quick(axioms=["phi9"]))


# loss

def test_kb_loss_examples():
    assert kb_loss(kb_of([1.0, 1.0, 1.0])).item() == 0.0
    assert kb_loss(kb_of([0.37])).item() == pytest.approx(0.63, abs=1e-12)
    assert kb_loss(kb_of([0.8, 0.6])).item() == pytest.approx(0.31623, abs=1e-5)


def test_kb_loss_gradient_matches_finite_differences():
    from ltnzsl.gradcheck import kb_loss_case
    from ltnzsl.autodiff import grad_check
    f, params = kb_loss_case()
    assert grad_check(f, params, 1e-5) <= 1e-4


# optimizer

def test_adam_zero_gradient_fixed_point():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    optimizer_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5).filter(lambda g: abs(g) > 1e-3), min_size=1, max_size=5), st.floats(1e-5, 0.5))
def test_adam_first_step_closed_form(g, lr):
    g = np.array(g)
    p = {"w": Tensor(np.zeros_like(g), requires_grad=True)}
    optimizer_step(p, {"w": g}, AdamState(), lr=lr)
    np.testing.assert_allclose(p["w"].data, -lr * g / (np.abs(g) + 1e-8), rtol=1e-9)


def test_adam_pure_decay_shrinks():
    w0 = np.array([2.0, -3.0, 0.5])
    p = {"w": Tensor(w0.copy(), requires_grad=True)}
    state = AdamState()
    for _ in range(5):
        optimizer_step(p, {"w": np.zeros(3)}, state, lr=0.01, weight_decay=0.1)
    assert np.all(np.abs(p["w"].data) < np.abs(w0))
    assert np.all(np.sign(p["w"].data) == np.sign(w0))


def test_adam_skips_non_finite():
    p = {"w": Tensor(np.ones(2), requires_grad=True)}
    state = AdamState()
    assert optimizer_step(p, {"w": np.array([np.nan, 1.0])}, state, lr=0.1) is False
    np.testing.assert_array_equal(p["w"].data, [1.0, 1.0])
    assert state.t == 0


def test_clip_grad_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert tr.clip_grad_norm(grads, 1.0) == 5.0
    np.testing.assert_allclose([grads["a"][0], grads["b"][0]], [0.6, 0.8])


# schedules

def test_lr_schedule_examples():
    cfg = TrainConfig(lr_finetune=1e-6, lr_pretrain=1e-4)
    assert lr_schedule(7, 1, cfg) == 1e-4
    assert lr_schedule(0, 2, cfg) == 1e-6
    assert lr_schedule(10, 2, cfg) == pytest.approx(0.8e-6)
    assert lr_schedule(25, 2, cfg) == pytest.approx(0.64e-6)


def test_presets():
    cfg, gamma = preset("awa2")
    assert (cfg.n_pos, cfg.n_neg, cfg.k_mask, cfg.epochs, gamma) == (12, 12, 15, 300, 0.7)
    cfg, gamma = preset("sun")
    assert "phi2" not in cfg.axioms and gamma == 0.4
    cfg, gamma = preset("synthetic", seed=4)
    assert cfg.seed == 4 and cfg.epochs == 50


def test_config_validation_and_round_trip():
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_pretrain=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"alpha": 1.0, "learning_rate": 3})
    cfg = quick()
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# training loop

def test_zero_epochs_returns_initial_parameters(small):
    cfg = quick(epochs=0)
    ckpt, hist = train(small, None, cfg)
    assert len(hist) == 0
    init = init_model(small, cfg)
    np.testing.assert_array_equal(ckpt["V"], init.embedder.V.data.astype(np.float32))


def test_same_seed_identical_history(small):
    a = train(small, None, quick(epochs=4))[1].to_json()
    b = train(small, None, quick(epochs=4))[1].to_json()
    c = train(small, None, quick(epochs=4, seed=1))[1].to_json()
    assert a == b and a != c


def test_history_records(small):
    cfg = quick(epochs=4, pretrain_epochs=2, hidden_dim=5, lr_finetune=1e-3)
    _, hist = train(small, None, cfg)
    assert [r.epoch for r in hist.records] == [0, 1, 2, 3]
    assert [r.phase for r in hist.records] == [1, 1, 2, 2]
    assert hist.records[2].lr == 1e-3
    assert set(hist.records[0].axioms) == {f"phi{i}" for i in range(1, 7)}
    assert TrainHistory.from_json(hist.to_json()) == hist


def test_loss_bounded_every_step(small, monkeypatch):
    seen = []
    real = tr.kb_loss

    def spy(kb):
        out = real(kb)
        seen.append(out.item())
        return out

    monkeypatch.setattr(tr, "kb_loss", spy)
    train(small, None, quick(epochs=3, p_schedule=dict(initial_p=2, step=2, k=1, cap=6)))
    assert seen and all(0.0 <= v <= 1.0 for v in seen)


def test_learning_signal_on_noiseless_data():
    ds = generate_synthetic(8, 4, 16, 32, 25, noise_std=0.0, seed=7, n_macros=3)
    cfg, _ = preset("synthetic", seed=7, epochs=21)
    _, hist = train(ds, None, cfg)
    assert hist.records[20].loss < hist.records[1].loss


def test_phi1_truth_high_on_noiseless_training_data():
    ds = generate_synthetic(8, 4, 16, 32, 25, noise_std=0.0, seed=7, n_macros=3)
    cfg, _ = preset("synthetic", seed=7)
    ckpt, _ = train(ds, None, cfg)
    assert tr.axiom_truths(ckpt, ds, builtin_axioms()[:1])["phi1"] >= 0.99


@pytest.mark.xfail(strict=True, reason="cross-class similarity axiom caps sat near 0.94 at this alpha; "
                                       "see the decisions ledger")
def test_noiseless_fifty_epochs_sat():
    ds = generate_synthetic(8, 4, 16, 32, 25, noise_std=0.0, seed=7, n_macros=3)
    cfg, _ = preset("synthetic", seed=7)
    _, hist = train(ds, None, cfg)
    assert hist.records[-1].sat >= 0.95


def test_divergence_raises_with_last_good_checkpoint(small, monkeypatch):
    real = tr.kb_loss
    calls = {"n": 0}
    steps = math.ceil(len(small.splits["train"]) / 8)

    def flaky(kb):
        calls["n"] += 1
        out = real(kb)
        return out * float("nan") if calls["n"] > steps else out

    monkeypatch.setattr(tr, "kb_loss", flaky)
    with pytest.raises(DivergenceError) as exc:
        train(small, None, quick(epochs=3))
    assert exc.value.checkpoint is not None and exc.value.checkpoint.epoch == 1
    assert len(exc.value.history) == 1


def test_masked_predicate_equals_class_predicate_at_k0(small):
    cfg = quick(k_mask=0)
    params = init_model(small, cfg)
    rng = np.random.default_rng(0)
    batch = sample_batch(small, cfg.batch_spec, rng)
    kb = build_kb(batch, builtin_axioms(), params, cfg, rng, small)
    assert np.all(kb.mask == 1.0)
    env = batch_env(batch, small, params, kb.mask, cfg.alpha)
    np.testing.assert_array_equal(ground_is_of_class(env, "x", "l").data,
                                  ground_is_of_class_masked(env, "x", "l").data)
