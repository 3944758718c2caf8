"""Class-aware concept attention, pooled concept predictions and the
concept losses, plus the prediction-heads ablation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .concepts import ConceptError, ConceptSchema, EpisodeAnnotation
from .nn import tensor as T
from .nn.layers import DropoutRNG, Linear
from .nn.params import ParameterStore
from .nn.tensor import ShapeError, Tensor


class SchemaMismatch(ConceptError):
    pass


@dataclass
class ConceptAttentionMaps:
    """Per-class attention tensors, each (B, S, |T_j|) and row-stochastic."""

    schema: ConceptSchema
    maps: list[Tensor]

    def numpy(self) -> list[np.ndarray]:
        return [m.data for m in self.maps]


class ConceptLayer:
    """Replaces the last encoder block.

    For each class j: queries from the sequence, keys/values from the
    class's learnable concept embeddings; per position the sequence row and
    all class outputs are concatenated and projected back to ``d``.
    """

    def __init__(self, store: ParameterStore, schema: ConceptSchema, d: int, name: str = "concept",
                 proj_init: str = "uniform"):
        self.schema, self.d, self.name = schema, d, name
        self.E, self.WQ, self.WK, self.WV = [], [], [], []
        for c in schema.classes:
            base = f"{name}.{c.name}"
            self.E.append(store.create(f"{base}.E", (c.cardinality, d), "normal"))
            self.WQ.append(store.create(f"{base}.WQ", (d, d), "uniform"))
            self.WK.append(store.create(f"{base}.WK", (d, d), "uniform"))
            self.WV.append(store.create(f"{base}.WV", (d, d), "uniform"))
        K = len(schema)
        self.proj = Linear(store, f"{name}.proj", d * (K + 1), d)
        if proj_init == "identity":
            self.set_identity_projection(store)
        elif proj_init != "uniform":
            raise ValueError(f"unknown projection init {proj_init!r}")

    @property
    def projection_names(self) -> tuple[str, str]:
        return f"{self.name}.proj.W", f"{self.name}.proj.b"

    def set_identity_projection(self, store: ParameterStore) -> None:
        """W_proj = [I | 0 ... 0], b = 0: the layer passes its input through."""
        W = np.zeros((self.d * (len(self.schema) + 1), self.d))
        W[: self.d] = np.eye(self.d)
        store.set(f"{self.name}.proj.W", W)
        store.set(f"{self.name}.proj.b", np.zeros(self.d))

    def __call__(self, X: Tensor) -> tuple[Tensor, ConceptAttentionMaps]:
        squeeze = X.ndim == 2
        if squeeze:
            X = X.reshape(1, *X.shape)
        if X.shape[-1] != self.d:
            raise ShapeError(f"concept layer expects dim {self.d}, got {X.shape}")
        scale = 1.0 / math.sqrt(self.d)
        outs, maps = [X], []
        for E, WQ, WK, WV in zip(self.E, self.WQ, self.WK, self.WV):
            Q = T.matmul(X, WQ)                          # (B, S, d)
            K = T.matmul(E, WK)                          # (n, d)
            V = T.matmul(E, WV)                          # (n, d)
            alpha = T.softmax(T.matmul(Q, K.swapaxes(0, 1)) * scale, axis=-1)   # (B, S, n)
            maps.append(alpha)
            outs.append(T.matmul(alpha, V))              # (B, S, d)
        Y = self.proj(T.concat(outs, axis=-1))
        if squeeze:
            Y = Y.reshape(*Y.shape[1:])
            maps = [m.reshape(*m.shape[1:]) for m in maps]
        return Y, ConceptAttentionMaps(self.schema, maps)


def concept_layer_forward(X: Tensor, layer: ConceptLayer) -> tuple[Tensor, ConceptAttentionMaps]:
    return layer(X)


def pool_predictions(maps: ConceptAttentionMaps | list[Tensor]) -> list[Tensor]:
    """Mean of each class's attention rows over sequence positions."""
    ms = maps.maps if isinstance(maps, ConceptAttentionMaps) else maps
    out = []
    for m in ms:
        if m.shape[-2] == 0:
            raise ShapeError("cannot pool an empty sequence")
        out.append(T.tmean(m, axis=-2))
    return out


def smoothed_targets(c, epsilon: float) -> np.ndarray:
    """Label-smoothed distribution for a one-hot ``c`` (last axis)."""
    c = np.asarray(c, dtype=np.float64)
    if not (0.0 <= epsilon < 1.0):
        raise ValueError("label smoothing must satisfy 0 <= eps < 1")
    if not (np.isin(c, (0.0, 1.0)).all() and np.all(c.sum(axis=-1) == 1)):
        raise ConceptError("smoothing target is not one-hot")
    n = c.shape[-1]
    return np.where(c == 1, 1.0 - epsilon + epsilon / n, epsilon / n)


def _targets(annotation, schema: ConceptSchema | None, batch: int | None) -> list[np.ndarray]:
    if isinstance(annotation, EpisodeAnnotation):
        if schema is None:
            raise SchemaMismatch("an EpisodeAnnotation target needs the schema")
        annotation.validate(schema)
        rows = [np.asarray(annotation.vectors[c.name], dtype=np.float64) for c in schema.classes]
        return [r if batch is None else np.tile(r, (batch, 1)) for r in rows]
    return [np.asarray(a, dtype=np.float64) for a in annotation]


def smoothed_ce(logits: list[Tensor], targets, epsilon: float) -> Tensor:
    """Sum over classes of the batch-mean smoothed cross-entropy of softmax(logits)."""
    if len(logits) != len(targets):
        raise SchemaMismatch(f"{len(logits)} predictions vs {len(targets)} target classes")
    total = None
    for lg, tgt in zip(logits, targets):
        if lg.shape[-1] != tgt.shape[-1]:
            raise SchemaMismatch(f"class width {lg.shape[-1]} vs target width {tgt.shape[-1]}")
        q = Tensor(smoothed_targets(tgt, epsilon).astype(lg.data.dtype))
        per = T.tsum(q * T.log_softmax(lg, axis=-1), axis=-1) * -1.0
        term = T.tmean(per) if per.ndim else per
        total = term if total is None else total + term
    return total


def concept_ce_loss(pred: list[Tensor], annotation, epsilon: float = 0.1,
                    schema: ConceptSchema | None = None) -> Tensor:
    """Pooled attention vectors are fed to softmax as logits, as the method states."""
    batch = pred[0].shape[0] if pred and pred[0].ndim == 2 else None
    return smoothed_ce(pred, _targets(annotation, schema, batch), epsilon)


def total_loss(act_terms, concept_term, lambda_concept: float = 0.2):
    act_total = act_terms[0] if isinstance(act_terms, tuple) else act_terms
    if lambda_concept == 0.0 or concept_term is None:
        return act_total
    return act_total + concept_term * lambda_concept


class PredictionHeads:
    """One Linear -> ReLU -> Dropout -> Linear head per class on the readout token."""

    def __init__(self, store: ParameterStore, schema: ConceptSchema, d: int, d_concept: int = 32,
                 dropout: float = 0.2, name: str = "heads"):
        self.schema, self.p, self.name = schema, dropout, name
        self.hidden = [Linear(store, f"{name}.{c.name}.hidden", d, d_concept) for c in schema.classes]
        self.out = [Linear(store, f"{name}.{c.name}.out", d_concept, c.cardinality) for c in schema.classes]

    def __call__(self, h_readout: Tensor, rng: DropoutRNG | None = None,
                 training: bool = False) -> list[Tensor]:
        logits = []
        for c, hid, out in zip(self.schema.classes, self.hidden, self.out):
            h = T.relu(hid(h_readout))
            h = T.dropout(h, self.p, rng(f"{self.name}.{c.name}") if rng else None, training)
            logits.append(out(h))
        return logits


def prediction_heads_forward(h_readout: Tensor, heads: PredictionHeads, schema: ConceptSchema,
                             rng: DropoutRNG | None = None, training: bool = False) -> list[Tensor]:
    if heads.schema != schema:
        raise SchemaMismatch("prediction heads were built for a different schema")
    return heads(h_readout, rng, training)


def heads_ce_loss(logits: list[Tensor], annotation, epsilon: float = 0.1,
                  schema: ConceptSchema | None = None) -> Tensor:
    batch = logits[0].shape[0] if logits and logits[0].ndim == 2 else None
    return smoothed_ce(logits, _targets(annotation, schema, batch), epsilon)


def concept_accuracy(pred: list[np.ndarray], targets: list[np.ndarray]) -> list[float]:
    """Per-class fraction of rows whose argmax matches the one-hot target."""
    return [float(np.mean(np.argmax(p, -1) == np.argmax(t, -1))) for p, t in zip(pred, targets)]


def dump_attention_csv(path, schema: ConceptSchema, maps: list[np.ndarray], step_ids=None) -> Path:
    """Long-format CSV: step, class, position, value, weight."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "class", "position", "value", "weight"])
        for c, m in zip(schema.classes, maps):
            m = np.asarray(m)
            if m.ndim == 2:
                m = m[None]
            for b in range(m.shape[0]):
                sid = step_ids[b] if step_ids is not None else b
                for s in range(m.shape[1]):
                    for k, value in enumerate(c.values):
                        w.writerow([sid, c.name, s, value, f"{m[b, s, k]:.8g}"])
    return path
