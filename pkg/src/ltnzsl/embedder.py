"""Feature head: mean pooling, an optional hidden layer, and the projection V.

Inputs are precomputed features, either vectors of length ``b_in`` or
``h x w x b_in`` grids. With no hidden layer the pooled feature is passed
through unchanged (``b == b_in``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ParameterError


@dataclass
class EmbedderParams:
    V: Tensor                          # b x m
    hidden_w: Tensor | None = None     # b_in x b
    hidden_b: Tensor | None = None     # b
    train_hidden: bool = True
    train_projection: bool = True

    @property
    def has_hidden(self) -> bool:
        return self.hidden_w is not None

    @property
    def b_in(self) -> int:
        return self.hidden_w.shape[0] if self.has_hidden else self.V.shape[0]

    @property
    def b(self) -> int:
        return self.V.shape[0]

    @property
    def m(self) -> int:
        return self.V.shape[1]

    def named(self) -> dict[str, Tensor]:
        out = {"V": self.V}
        if self.has_hidden:
            out["hidden_w"] = self.hidden_w
            out["hidden_b"] = self.hidden_b
        return out

    def trainable(self) -> dict[str, Tensor]:
        out = {}
        if self.train_projection:
            out["V"] = self.V
        if self.has_hidden and self.train_hidden:
            out["hidden_w"] = self.hidden_w
            out["hidden_b"] = self.hidden_b
        return out

    def set_phase(self, phase: int) -> None:
        """Phase 1 freezes the hidden layer; phase 2 trains everything."""
        self.train_hidden = phase >= 2
        self.train_projection = True


def init_params(b_in: int, b: int, m: int, seed: int, hidden: bool | None = None) -> EmbedderParams:
    """Seeded initialization; V ~ N(0, 1/b), hidden weights ~ N(0, 1/b_in).

    ``hidden`` defaults to ``b_in != b``.
    """
    if min(b_in, b, m) < 1:
        raise ParameterError(f"dimensions must be positive, got b_in={b_in}, b={b}, m={m}")
    hidden = (b_in != b) if hidden is None else hidden
    if not hidden and b_in != b:
        raise ParameterError("without a hidden layer b must equal b_in")
    rng = np.random.default_rng(seed)
    hw = hb = None
    if hidden:
        hw = Tensor(rng.normal(0.0, 1.0 / np.sqrt(b_in), size=(b_in, b)), requires_grad=True)
        hb = Tensor(np.zeros(b), requires_grad=True)
    V = Tensor(rng.normal(0.0, 1.0 / np.sqrt(b), size=(b, m)), requires_grad=True)
    return EmbedderParams(V=V, hidden_w=hw, hidden_b=hb)


def embed_batch(params: EmbedderParams, inputs) -> Tensor:
    """``n x b_in`` or ``n x h x w x b_in`` inputs to ``n x b`` pooled features."""
    x = ad.as_tensor(inputs)
    if x.ndim == 4:
        x = ad.mean_pool(x)
    if x.ndim != 2:
        raise DimensionError(f"expected n x b_in or n x h x w x b_in input, got shape {x.shape}")
    if x.shape[1] != params.b_in:
        raise DimensionError(f"input feature size {x.shape[1]} does not match b_in={params.b_in}")
    if params.has_hidden:
        x = ad.tanh(ad.matmul(x, params.hidden_w) + params.hidden_b)
    return x


def embed(params: EmbedderParams, inputs) -> Tensor:
    """Single sample: a ``b_in`` vector or an ``h x w x b_in`` grid, to ``b``."""
    x = ad.as_tensor(inputs)
    if x.ndim not in (1, 3):
        raise DimensionError(f"expected a vector or an h x w x b_in grid, got shape {x.shape}")
    batched = ad.reshape(x, (1,) + x.shape)
    return ad.reshape(embed_batch(params, batched), (params.b,))


def project(x, V) -> Tensor:
    """Attribute-space embedding ``V^T x`` (row-wise for a batch)."""
    x, V = ad.as_tensor(x), ad.as_tensor(V)
    if x.ndim == 1:
        if x.shape[0] != V.shape[0]:
            raise DimensionError(f"project shape mismatch: x {x.shape} vs V {V.shape}")
        return ad.reshape(ad.matmul(ad.reshape(x, (1, -1)), V), (V.shape[1],))
    return ad.matmul(x, V)
