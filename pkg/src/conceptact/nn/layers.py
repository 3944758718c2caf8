"""Parameterised building blocks on top of :mod:`conceptact.nn.tensor`.

Layers hold references to leaves inside a :class:`ParameterStore`; they keep
no other state.  Every tensor carries a leading batch axis ``(B, S, d)``.
"""
from __future__ import annotations

import math
import zlib

import numpy as np

from . import tensor as T
from .params import ParameterStore
from .tensor import ShapeError, Tensor


class DropoutRNG:
    """Per-site dropout generators derived from (seed, step, site name).

    Deriving by site keeps masks for one layer independent of which other
    layers exist in the model.
    """

    def __init__(self, seed: int, step: int):
        self.seed = int(seed)
        self.step = int(step)

    def __call__(self, site: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.step, zlib.crc32(site.encode())])


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear expects last dim {W.shape[0]}, got {x.shape}")
    y = T.matmul(x, W)
    return y + b if b is not None else y


class Linear:
    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int, bias: bool = True):
        self.name = name
        self.W = store.create(f"{name}.W", (d_in, d_out), "uniform")
        self.b = store.create(f"{name}.b", (d_out,), "zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.W, self.b)


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, d: int):
        self.gamma = store.create(f"{name}.gamma", (d,), "ones")
        self.beta = store.create(f"{name}.beta", (d,), "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


def causal_bias(n_q: int, n_k: int, dtype) -> np.ndarray:
    """Additive mask: query i may attend to keys 0..i only."""
    allowed = np.tril(np.ones((n_q, n_k), dtype=bool))
    return np.where(allowed, 0.0, -1e9).astype(dtype)


def key_padding_bias(valid: np.ndarray, dtype) -> np.ndarray:
    """``valid`` is (B, S_k) booleans; returns a (B, 1, 1, S_k) additive mask."""
    return np.where(valid, 0.0, -1e9).astype(dtype)[:, None, None, :]


class MultiHeadAttention:
    """Scaled dot-product attention with ``heads`` parallel heads."""

    def __init__(self, store: ParameterStore, name: str, d: int, heads: int):
        if d % heads:
            raise ShapeError(f"model dim {d} is not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.q = Linear(store, f"{name}.q", d, d)
        self.k = Linear(store, f"{name}.k", d, d)
        self.v = Linear(store, f"{name}.v", d, d)
        self.o = Linear(store, f"{name}.o", d, d)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, S, _ = x.shape
        return x.reshape(B, S, self.heads, self.d // self.heads).swapaxes(1, 2)

    def __call__(self, xq: Tensor, xkv: Tensor, causal: bool = False,
                 bias: np.ndarray | None = None, return_heads: bool = False) -> Tensor:
        squeeze = xq.ndim == 2
        if squeeze:
            xq, xkv = xq.reshape(1, *xq.shape), xkv.reshape(1, *xkv.shape)
        if xq.shape[-1] != self.d or xkv.shape[-1] != self.d:
            raise ShapeError("attention sources must share the model dimension")
        B, Sq, _ = xq.shape
        Sk = xkv.shape[1]
        q, k, v = self._split(self.q(xq)), self._split(self.k(xkv)), self._split(self.v(xkv))
        scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.d // self.heads))
        mask = np.zeros((1, 1, Sq, Sk), dtype=scores.data.dtype)
        if causal:
            mask = mask + causal_bias(Sq, Sk, mask.dtype)
        if bias is not None:
            mask = mask + bias
        if causal or bias is not None:
            scores = scores + Tensor(mask)
        attn = T.softmax(scores, axis=-1)
        self.last_weights = attn.data
        heads_out = T.matmul(attn, v)                      # (B, h, Sq, dk)
        merged = heads_out.swapaxes(1, 2).reshape(B, Sq, self.d)
        out = self.o(merged)
        if squeeze:
            out = out.reshape(Sq, self.d)
        return (out, heads_out) if return_heads else out


class FeedForward:
    def __init__(self, store: ParameterStore, name: str, d: int, d_ff: int):
        self.fc1 = Linear(store, f"{name}.fc1", d, d_ff)
        self.fc2 = Linear(store, f"{name}.fc2", d_ff, d)
        self.name = name

    def __call__(self, x: Tensor, p: float = 0.0, rng: DropoutRNG | None = None,
                 training: bool = False) -> Tensor:
        h = T.relu(self.fc1(x))
        h = T.dropout(h, p, rng(f"{self.name}.hidden") if rng else None, training)
        return self.fc2(h)


class EncoderLayer:
    """Pre-norm block: x + Attn(LN(x)), then x + FFN(LN(x)).  No final norm,
    so zeroed output projections make the block an exact identity."""

    def __init__(self, store: ParameterStore, name: str, d: int, heads: int, d_ff: int,
                 dropout: float = 0.0):
        self.name = name
        self.norm1 = LayerNorm(store, f"{name}.norm1", d)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d, heads)
        self.norm2 = LayerNorm(store, f"{name}.norm2", d)
        self.ffn = FeedForward(store, f"{name}.ffn", d, d_ff)
        self.p = dropout

    def __call__(self, x: Tensor, bias: np.ndarray | None = None, rng: DropoutRNG | None = None,
                 training: bool = False) -> Tensor:
        h = self.norm1(x)
        a = self.attn(h, h, bias=bias)
        x = x + T.dropout(a, self.p, rng(f"{self.name}.attn") if rng else None, training)
        f = self.ffn(self.norm2(x), self.p, rng, training)
        return x + T.dropout(f, self.p, rng(f"{self.name}.ffn") if rng else None, training)


class DecoderLayer:
    """Masked self-attention over query slots, cross-attention to memory, FFN."""

    def __init__(self, store: ParameterStore, name: str, d: int, heads: int, d_ff: int,
                 dropout: float = 0.0):
        self.name = name
        self.norm1 = LayerNorm(store, f"{name}.norm1", d)
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", d, heads)
        self.norm2 = LayerNorm(store, f"{name}.norm2", d)
        self.norm_mem = LayerNorm(store, f"{name}.norm_mem", d)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", d, heads)
        self.norm3 = LayerNorm(store, f"{name}.norm3", d)
        self.ffn = FeedForward(store, f"{name}.ffn", d, d_ff)
        self.p = dropout

    def __call__(self, x: Tensor, memory: Tensor, rng: DropoutRNG | None = None,
                 training: bool = False) -> Tensor:
        h = self.norm1(x)
        x = x + T.dropout(self.self_attn(h, h, causal=True), self.p,
                          rng(f"{self.name}.self_attn") if rng else None, training)
        m = self.norm_mem(memory)
        x = x + T.dropout(self.cross_attn(self.norm2(x), m), self.p,
                          rng(f"{self.name}.cross_attn") if rng else None, training)
        f = self.ffn(self.norm3(x), self.p, rng, training)
        return x + T.dropout(f, self.p, rng(f"{self.name}.ffn") if rng else None, training)
