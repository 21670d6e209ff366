import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltnzsl.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ltnzsl.data import generate_synthetic
from ltnzsl.errors import MissingFileError, ParameterError
from ltnzsl.evaluation import (compute_metrics, evaluate, gamma_sweep, harmonic, per_class_accuracy,
                               predict_gzsl, predict_zsl, scores)
from ltnzsl.fuzzy import FuzzyConfig
from ltnzsl.trainer import TrainConfig, train

logging.getLogger("ltnzsl").setLevel(logging.ERROR)


@pytest.fixture(scope="module")
def trained():
    ds = generate_synthetic(4, 3, 10, 8, 12, noise_std=0.1, seed=5, n_macros=2)
    cfg = TrainConfig(alpha=4.0, k_mask=2, n_pos=4, n_neg=4, epochs=8, lr_pretrain=0.05, weight_decay=1e-3,
                      p_schedule=dict(initial_p=1, step=0, cap=1), seed=5)
    ckpt, _ = train(ds, None, cfg)
    return ckpt, ds


# prediction

def test_predict_zsl_single_class():
    assert predict_zsl(np.array([[1.0, -2.0]]), np.eye(2), np.array([[0.3], [0.1]]), [9])[0] == 9


def test_predict_zsl_identity_toy():
    attrs = np.array([[1.0, 0.0, 0.6], [0.0, 1.0, 0.8], [0.0, 0.0, 0.0]])
    attrs /= np.linalg.norm(attrs, axis=0)
    for c in range(3):
        assert predict_zsl(attrs[:, c], np.eye(3), attrs) == c


def test_predict_zsl_tie_lowest_id():
    attrs = np.array([[1.0, 1.0], [0.5, 0.5]])
    assert predict_zsl(np.array([1.0, 1.0]), np.eye(2), attrs, [7, 4]) == 4
    assert predict_zsl(np.array([1.0, 1.0]), np.eye(2), attrs) == 0


def test_predict_gzsl_examples():
    x = np.array([[1.0, 0.0]])
    attrs = np.array([[0.6, 0.5], [0.0, 0.0]])   # class 0 seen, class 1 unseen
    seen = np.array([True, False])
    assert predict_gzsl(x, np.eye(2), attrs, seen, 0.0)[0] == 0
    assert predict_gzsl(x, np.eye(2), attrs, seen, 0.2)[0] == 1
    assert predict_gzsl(x, np.eye(2), attrs, seen, 1e9)[0] == 1
    with pytest.raises(ParameterError):
        predict_gzsl(x, np.eye(2), attrs, seen, -0.1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_gzsl_gamma0_is_union_argmax_and_agrees_with_zsl(seed):
    g = np.random.default_rng(seed)
    x, V, attrs = g.normal(size=(20, 4)), g.normal(size=(4, 3)), g.normal(size=(3, 6))
    seen = np.array([1, 1, 1, 0, 0, 0], dtype=bool)
    gz = predict_gzsl(x, V, attrs, seen, 0.0)
    np.testing.assert_array_equal(gz, np.argmax(scores(x, V, attrs), axis=1))
    zsl = predict_zsl(x, V, attrs[:, ~seen], np.arange(3, 6))
    unseen_best = ~seen[gz]
    np.testing.assert_array_equal(gz[unseen_best], zsl[unseen_best])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_prediction_switches_to_unseen_once(seed):
    g = np.random.default_rng(seed)
    x, V, attrs = g.normal(size=(30, 4)), g.normal(size=(4, 3)), g.normal(size=(3, 5))
    seen = np.array([1, 0, 1, 0, 1], dtype=bool)
    prev = np.zeros(30, dtype=bool)
    for gamma in np.linspace(0, 5, 26):
        now = ~seen[predict_gzsl(x, V, attrs, seen, gamma)]
        assert np.all(now >= prev)
        prev = now


# metrics

def test_harmonic_examples():
    assert harmonic(0.4, 0.4) == pytest.approx(0.4)
    assert harmonic(0.0, 0.9) == 0.0
    assert harmonic(0.0, 0.0) == 0.0


def test_compute_metrics_per_class_mean():
    # unseen classes 2 and 3: per-class accuracies 1.0 and 0.5
    labels = np.array([0, 0, 2, 2, 3, 3])
    preds = np.array([0, 1, 2, 2, 3, 0])
    r = compute_metrics(preds, labels, [0, 1], [2, 3], zsl_predictions=np.array([2, 3, 3, 3]),
                        zsl_labels=np.array([2, 2, 3, 3]))
    assert r.U == 0.75 and r.S == 0.5
    assert r.H == pytest.approx(harmonic(0.75, 0.5))
    assert r.T1 == 0.75
    assert r.per_class["gzsl/2"] == 1.0 and r.per_class["zsl/2"] == 0.5


def test_empty_class_excluded_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="ltnzsl"):
        acc = per_class_accuracy([0, 0], [0, 0], [0, 1])
    assert acc == {0: 1.0}
    assert "no test samples" in caplog.text


def test_report_rates_in_unit_interval(trained):
    ckpt, ds = trained
    r = evaluate(ckpt, ds, 0.3)
    for v in (r.T1, r.U, r.S, r.H):
        assert 0.0 <= v <= 1.0
    assert r.H == pytest.approx(harmonic(r.U, r.S))


# sweep

def test_sweep_single_gamma(trained):
    ckpt, ds = trained
    rows = gamma_sweep(ckpt, ds, [0.5])
    assert len(rows) == 1 and rows[0].best


def test_sweep_monotone_and_reduces_at_zero(trained):
    ckpt, ds = trained
    rows = gamma_sweep(ckpt, ds, [round(0.1 * i, 1) for i in range(11)] + [2.0, 4.0, 8.0])
    S, U = [r.S for r in rows], [r.U for r in rows]
    assert all(b <= a for a, b in zip(S, S[1:]))
    assert all(b >= a for a, b in zip(U, U[1:]))
    plain = evaluate(ckpt, ds, 0.0)
    assert (rows[0].U, rows[0].S, rows[0].H) == (plain.U, plain.S, plain.H)
    assert sum(r.best for r in rows) == 1
    assert max(rows, key=lambda r: r.H).H == next(r for r in rows if r.best).H


# checkpoints

def test_checkpoint_reload_reproduces_report(trained, tmp_path):
    ckpt, ds = trained
    save_checkpoint(ckpt, tmp_path)
    back = load_checkpoint(tmp_path)
    for k in ckpt.tensors:
        np.testing.assert_array_equal(back[k], ckpt[k])
    assert back.fuzzy == ckpt.fuzzy and back.epoch == ckpt.epoch and back.config == ckpt.config
    assert evaluate(back, ds, 0.4).to_json() == evaluate(ckpt, ds, 0.4).to_json()


def test_checkpoint_capture_rounds_to_float32():
    v = np.array([[0.1, 1 / 3]])
    ck = Checkpoint.capture({"V": v}, FuzzyConfig(), {}, 0)
    np.testing.assert_array_equal(ck["V"], v.astype(np.float32).astype(np.float64))


def test_checkpoint_missing(tmp_path):
    with pytest.raises(MissingFileError):
        load_checkpoint(tmp_path)


def test_hidden_layer_checkpoint_evaluates(tmp_path):
    ds = generate_synthetic(3, 2, 6, 5, 6, seed=1)
    ckpt, _ = train(ds, None, TrainConfig(epochs=2, hidden_dim=4, n_pos=2, n_neg=2, k_mask=1,
                                          lr_pretrain=0.01, pretrain_epochs=1, seed=1))
    assert set(ckpt.tensors) == {"V", "hidden_w", "hidden_b"}
    save_checkpoint(ckpt, tmp_path)
    assert evaluate(load_checkpoint(tmp_path), ds).to_json() == evaluate(ckpt, ds).to_json()
