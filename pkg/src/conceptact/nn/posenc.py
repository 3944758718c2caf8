"""Positional embeddings: learned 1-D rows and fixed 2-D sinusoids."""
from __future__ import annotations

import numpy as np

from .params import ParameterStore
from .tensor import ShapeError, Tensor


def _sinusoid(positions: np.ndarray, d: int, temperature: float) -> np.ndarray:
    ch = np.arange(d)
    angle = positions[:, None] / temperature ** (2 * (ch // 2) / d)
    return np.where(ch % 2 == 0, np.sin(angle), np.cos(angle))


def sinusoidal_2d(h: int, w: int, d: int, temperature: float = 10000.0, dtype=np.float32) -> np.ndarray:
    """(h*w, d) table; first half of the channels encodes the row, second half the column."""
    if d % 2:
        raise ShapeError(f"2-D sinusoidal embedding needs an even dimension, got {d}")
    half = d // 2
    rows = _sinusoid(np.arange(h, dtype=np.float64), half, temperature)
    cols = _sinusoid(np.arange(w, dtype=np.float64), half, temperature)
    table = np.concatenate([np.repeat(rows, w, axis=0), np.tile(cols, (h, 1))], axis=1)
    return table.astype(dtype)


def learned_1d(store: ParameterStore, name: str, n: int, d: int) -> Tensor:
    return store.create(name, (n, d), "normal")


def positional_embeddings(kind: str, dims: tuple, store: ParameterStore | None = None,
                          name: str = "pos", dtype=np.float32):
    if kind == "learned-1d":
        if store is None:
            raise ValueError("learned-1d embeddings need a parameter store")
        n, d = dims
        return learned_1d(store, name, n, d)
    if kind == "sinusoidal-2d":
        h, w, d = dims
        return sinusoidal_2d(h, w, d, dtype=dtype)
    raise ValueError(f"unknown positional embedding kind {kind!r}")
