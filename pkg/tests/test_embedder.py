import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltnzsl import autodiff as ad
from ltnzsl.autodiff import Tensor, backward
from ltnzsl.embedder import EmbedderParams, embed, embed_batch, init_params, project
from ltnzsl.errors import DimensionError, ParameterError


def identity_head(b):
    return EmbedderParams(V=Tensor(np.eye(b), requires_grad=True))


def test_embed_identity_vector():
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(embed(identity_head(3), x).data, x)


def test_embed_one_by_one_grid():
    grid = np.array([[[1.0, 2.0, 3.0]]])
    np.testing.assert_array_equal(embed(identity_head(3), grid).data, [1.0, 2.0, 3.0])


def test_embed_two_by_two_grid():
    grid = np.array([1.0, 3.0, 5.0, 7.0]).reshape(2, 2, 1)
    np.testing.assert_array_equal(embed(identity_head(1), grid).data, [4.0])


def test_embed_dimension_mismatch():
    with pytest.raises(DimensionError):
        embed(identity_head(3), np.ones(4))
    with pytest.raises(DimensionError):
        embed(identity_head(3), np.ones((2, 3)))


def test_project_examples():
    x = Tensor([0.3, -0.2])
    np.testing.assert_array_equal(project(x, np.eye(2)).data, x.data)
    np.testing.assert_array_equal(project(x, np.zeros((2, 3))).data, np.zeros(3))
    np.testing.assert_array_equal(project(Tensor([3.0, 4.0]), np.array([[1.0], [1.0]])).data, [7.0])


def test_project_shape_mismatch():
    with pytest.raises(DimensionError):
        project(Tensor([1.0, 2.0, 3.0]), np.ones((2, 2)))


def test_init_params_determinism():
    a, b = init_params(8, 8, 4, seed=3), init_params(8, 8, 4, seed=3)
    np.testing.assert_array_equal(a.V.data, b.V.data)
    c = init_params(8, 8, 4, seed=4)
    assert not np.array_equal(a.V.data, c.V.data)


def test_init_params_scale():
    p = init_params(128, 128, 64, seed=0)
    assert abs(p.V.data.std() * np.sqrt(128) - 1.0) < 0.2
    h = init_params(100, 128, 64, seed=0)
    assert h.has_hidden and abs(h.hidden_w.data.std() * np.sqrt(100) - 1.0) < 0.2


def test_init_params_rejects_bad_dims():
    with pytest.raises(ParameterError):
        init_params(0, 4, 4, seed=0)
    with pytest.raises(ParameterError):
        init_params(4, 6, 4, seed=0, hidden=False)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3), st.floats(-3, 3))
def test_embed_project_linear_without_hidden(seed, a, b):
    g = np.random.default_rng(seed)
    p = init_params(5, 5, 3, seed=seed)
    x, y = g.normal(size=(2, 2, 5)), g.normal(size=(2, 2, 5))
    f = lambda z: project(embed(p, z), p.V).data
    np.testing.assert_allclose(f(a * x + b * y), a * f(x) + b * f(y), atol=1e-9)


def test_gradients_reach_all_groups():
    p = init_params(6, 4, 3, seed=1)
    inputs = np.random.default_rng(1).normal(size=(5, 2, 2, 6))
    loss = ad.tsum(ad.sigmoid(project(embed_batch(p, inputs), p.V)))
    backward(loss)
    for name, t in p.trainable().items():
        assert t.grad is not None and np.abs(t.grad).max() > 0, name


def test_phases_toggle_hidden_group():
    p = init_params(6, 4, 3, seed=1)
    p.set_phase(1)
    assert set(p.trainable()) == {"V"}
    p.set_phase(2)
    assert set(p.trainable()) == {"V", "hidden_w", "hidden_b"}
