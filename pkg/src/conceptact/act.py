"""ACT policy: CVAE posterior encoder, multimodal transformer encoder,
action-chunk decoder, losses, and temporal-ensembled inference.

The same :class:`Policy` class builds the three method variants: plain ACT,
ConceptACT with the concept layer in the last encoder slot, and ConceptACT
with prediction heads on the readout token.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .concept_layer import (ConceptLayer, PredictionHeads, concept_ce_loss, heads_ce_loss,
                            pool_predictions)
from .concepts import ConceptSchema
from .nn import tensor as T
from .nn.layers import (DecoderLayer, DropoutRNG, EncoderLayer, LayerNorm, Linear,
                        key_padding_bias)
from .nn.params import ParameterStore
from .nn.posenc import sinusoidal_2d
from .nn.tensor import NonFiniteError, ShapeError, Tensor

METHODS = ("act", "conceptact_transformer", "conceptact_heads")


@dataclass
class ActConfig:
    method: str = "act"
    d_model: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 1
    vae_layers: int = 1
    d_ff: int = 128
    chunk: int = 20
    latent: int = 8
    kl_weight: float = 10.0
    patch: int = 8
    cameras: int = 2
    image_size: int = 32
    d_s: int = 4
    d_a: int = 4
    dropout: float = 0.1
    ensemble_decay: float = 0.01
    concept_weight: float = 0.2
    label_smoothing: float = 0.1
    d_concept: int = 32
    heads_dropout: float = 0.2
    concept_proj_init: str = "uniform"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.chunk < 1 or self.latent < 1:
            raise ValueError("chunk and latent sizes must be >= 1")
        if self.method == "conceptact_transformer" and self.enc_layers < 1:
            raise ValueError("the concept layer needs at least one encoder slot")
        if self.image_size % self.patch:
            raise ShapeError(f"image size {self.image_size} is not divisible by patch {self.patch}")

    @property
    def tokens_per_camera(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def seq_len(self) -> int:
        return 2 + self.cameras * self.tokens_per_camera

    @classmethod
    def full_scale(cls, **overrides) -> "ActConfig":
        """Table-1 scale settings."""
        base = dict(d_model=512, heads=16, d_ff=3200, enc_layers=4, dec_layers=1, vae_layers=4,
                    chunk=100, latent=32, d_concept=128)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ActConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class LatentPosterior:
    mu: Tensor
    logvar: Tensor

    def sample(self, eta: np.ndarray) -> Tensor:
        return self.mu + T.exp(self.logvar * 0.5) * Tensor(eta.astype(self.mu.data.dtype))


@dataclass
class ChunkPrediction:
    actions: np.ndarray     # (k, d_a)
    issued_at: int


@dataclass
class ForwardOutput:
    actions: Tensor                         # (B, k, d_a)
    posterior: LatentPosterior | None
    concept_logits: list[Tensor] | None     # pooled attention (transformer) or head logits
    attention_maps: list[Tensor] | None
    encoder_out: Tensor


def kl_divergence(post: LatentPosterior) -> Tensor:
    """Batch mean of 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)."""
    mu, lv = post.mu, post.logvar
    if not (np.isfinite(mu.data).all() and np.isfinite(lv.data).all()):
        raise NonFiniteError("non-finite posterior")
    per = T.tsum(mu * mu + T.exp(lv) - 1.0 - lv, axis=-1) * 0.5
    return T.tmean(per) if per.ndim else per


def masked_l1(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean |pred - target| over valid chunk rows and all action dims."""
    m = np.asarray(mask, dtype=pred.data.dtype)
    if m.sum() == 0:
        raise ValueError("empty loss mask")
    diff = T.tabs(pred - Tensor(np.asarray(target, dtype=pred.data.dtype)))
    weighted = diff * Tensor(m[..., None])
    return T.tsum(weighted) * (1.0 / (m.sum() * pred.shape[-1]))


def act_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray, posterior: LatentPosterior | None,
             kl_weight: float = 10.0):
    """(total, l1, kl) with total = l1 + kl_weight * kl."""
    l1 = masked_l1(pred, target, mask)
    if posterior is None:
        kl = Tensor(np.zeros((), dtype=pred.data.dtype))
    else:
        kl = kl_divergence(posterior)
    return l1 + kl * kl_weight, l1, kl


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, C, H, W, 3) -> (B, C, H'W', patch*patch*3), dtype preserved."""
    B, C, H, W, _ = images.shape
    if H % patch or W % patch:
        raise ShapeError(f"image {H}x{W} not divisible by patch {patch}")
    x = images.reshape(B, C, H // patch, patch, W // patch, patch, 3)
    x = x.transpose(0, 1, 2, 4, 3, 5, 6).reshape(B, C, (H // patch) * (W // patch), patch * patch * 3)
    return x


class Policy:
    def __init__(self, cfg: ActConfig, store: ParameterStore, schema: ConceptSchema | None = None):
        if cfg.method != "act" and schema is None:
            raise ValueError(f"method {cfg.method} needs a concept schema")
        self.cfg, self.store, self.schema = cfg, store, schema
        d, k = cfg.d_model, cfg.chunk
        # posterior encoder
        self.vae_cls = store.create("vae.cls", (1, d), "normal")
        self.vae_state = Linear(store, "vae.state_proj", cfg.d_s, d)
        self.vae_action = Linear(store, "vae.action_proj", cfg.d_a, d)
        self.vae_pos = store.create("vae.pos", (k + 2, d), "normal")
        self.vae_layers = [EncoderLayer(store, f"vae.layer{i}", d, cfg.heads, cfg.d_ff, cfg.dropout)
                           for i in range(cfg.vae_layers)]
        self.vae_head = Linear(store, "vae.head", d, 2 * cfg.latent)
        # input tokens
        self.latent_proj = Linear(store, "enc.latent_proj", cfg.latent, d)
        self.state_proj = Linear(store, "enc.state_proj", cfg.d_s, d)
        self.token_pos = store.create("enc.pos", (2, d), "normal")
        P = cfg.patch * cfg.patch * 3
        self.patch_W = store.create("enc.patch.W", (cfg.cameras, P, d), "uniform") if cfg.cameras else None
        self.patch_b = store.create("enc.patch.b", (cfg.cameras, 1, d), "zeros") if cfg.cameras else None
        side = cfg.image_size // cfg.patch
        self.patch_pos = sinusoidal_2d(side, side, d, dtype=store.dtype)
        # encoder
        n_std = cfg.enc_layers - 1 if cfg.method == "conceptact_transformer" else cfg.enc_layers
        self.enc_layers = [EncoderLayer(store, f"enc.layer{i}", d, cfg.heads, cfg.d_ff, cfg.dropout)
                           for i in range(n_std)]
        self.concept_layer = None
        self.heads = None
        if cfg.method == "conceptact_transformer":
            self.concept_layer = ConceptLayer(store, schema, d, proj_init=cfg.concept_proj_init)
        elif cfg.method == "conceptact_heads":
            self.heads = PredictionHeads(store, schema, d, cfg.d_concept, cfg.heads_dropout)
        # decoder
        self.queries = store.create("dec.queries", (k, d), "normal")
        self.dec_layers = [DecoderLayer(store, f"dec.layer{i}", d, cfg.heads, cfg.d_ff, cfg.dropout)
                           for i in range(cfg.dec_layers)]
        self.dec_norm = LayerNorm(store, "dec.norm", d)
        self.action_head = Linear(store, "dec.action_head", d, cfg.d_a)

    # -- pieces ---------------------------------------------------------------
    def vae_encode(self, proprio: np.ndarray, actions: np.ndarray, mask: np.ndarray | None = None,
                   rng: DropoutRNG | None = None, training: bool = False) -> LatentPosterior:
        cfg, dt = self.cfg, self.store.dtype
        proprio = np.asarray(proprio, dtype=dt)
        actions = np.asarray(actions, dtype=dt)
        if actions.ndim != 3 or actions.shape[1:] != (cfg.chunk, cfg.d_a) or proprio.shape[-1] != cfg.d_s:
            raise ShapeError(f"posterior inputs have shapes {proprio.shape}, {actions.shape}")
        B = actions.shape[0]
        cls = self.vae_cls + Tensor(np.zeros((B, 1, cfg.d_model), dtype=dt))
        s = self.vae_state(Tensor(proprio[:, None, :]))
        a = self.vae_action(Tensor(actions))
        x = T.concat([cls, s, a], axis=1) + self.vae_pos
        bias = None
        if mask is not None:
            valid = np.concatenate([np.ones((B, 2), bool), np.asarray(mask, bool)], axis=1)
            bias = key_padding_bias(valid, dt)
        for layer in self.vae_layers:
            x = layer(x, bias=bias, rng=rng, training=training)
        out = self.vae_head(x[:, 0, :])
        return LatentPosterior(out[:, : cfg.latent], out[:, cfg.latent:])

    def build_input_sequence(self, z, proprio: np.ndarray, images: np.ndarray) -> Tensor:
        """[z'; s'; camera-0 patches; camera-1 patches; ...] as (B, S, d)."""
        cfg, dt = self.cfg, self.store.dtype
        proprio = np.asarray(proprio, dtype=dt)
        if proprio.ndim != 2 or proprio.shape[1] != cfg.d_s:
            raise ShapeError(f"proprio must be (B, {cfg.d_s}), got {proprio.shape}")
        B = proprio.shape[0]
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=dt))
        zt = self.latent_proj(z).reshape(B, 1, cfg.d_model)
        st = self.state_proj(Tensor(proprio)).reshape(B, 1, cfg.d_model)
        parts = [T.concat([zt, st], axis=1) + self.token_pos]
        if cfg.cameras:
            images = np.asarray(images)
            if images.shape[1:] != (cfg.cameras, cfg.image_size, cfg.image_size, 3):
                raise ShapeError(f"images must be (B, {cfg.cameras}, {cfg.image_size}, {cfg.image_size}, 3), "
                                 f"got {images.shape}")
            patches = patchify(images, cfg.patch).astype(dt) * (1.0 / 255.0) - 0.5
            tok = T.matmul(Tensor(patches), self.patch_W) + self.patch_b    # (B, C, N, d)
            tok = tok + Tensor(self.patch_pos)
            parts.append(tok.reshape(B, cfg.cameras * cfg.tokens_per_camera, cfg.d_model))
        return T.concat(parts, axis=1) if len(parts) > 1 else parts[0]

    def encode(self, X: Tensor, rng: DropoutRNG | None = None, training: bool = False):
        maps = None
        for layer in self.enc_layers:
            X = layer(X, rng=rng, training=training)
        if self.concept_layer is not None:
            X, attn = self.concept_layer(X)
            maps = attn.maps
        return X, maps

    def decode(self, memory: Tensor, rng: DropoutRNG | None = None, training: bool = False) -> Tensor:
        B = memory.shape[0]
        D = self.queries + Tensor(np.zeros((B, self.cfg.chunk, self.cfg.d_model), dtype=self.store.dtype))
        for layer in self.dec_layers:
            D = layer(D, memory, rng=rng, training=training)
        return self.action_head(self.dec_norm(D))

    # -- full passes ------------------------------------------------------------
    def forward(self, proprio: np.ndarray, images: np.ndarray, actions: np.ndarray | None = None,
                mask: np.ndarray | None = None, eta: np.ndarray | None = None,
                rng: DropoutRNG | None = None, training: bool = False) -> ForwardOutput:
        """Posterior-conditioned pass when ``actions`` is given, else z = 0."""
        B = np.asarray(proprio).shape[0]
        post = None
        if actions is not None:
            post = self.vae_encode(proprio, actions, mask, rng, training)
            if eta is None:
                z = post.mu
            else:
                z = post.sample(eta)
        else:
            z = Tensor(np.zeros((B, self.cfg.latent), dtype=self.store.dtype))
        X = self.build_input_sequence(z, proprio, images)
        Xn, maps = self.encode(X, rng, training)
        concept_logits = None
        if maps is not None:
            concept_logits = pool_predictions(maps)
        elif self.heads is not None:
            concept_logits = self.heads(Xn[:, 0, :], rng, training)
        return ForwardOutput(self.decode(Xn, rng, training), post, concept_logits, maps, Xn)

    def losses(self, out: ForwardOutput, target: np.ndarray, mask: np.ndarray,
               concept_targets: list[np.ndarray] | None = None) -> dict[str, Tensor]:
        cfg = self.cfg
        total, l1, kl = act_loss(out.actions, target, mask, out.posterior, cfg.kl_weight)
        terms = {"l1": l1, "kl": kl}
        concept = None
        if out.concept_logits is not None and concept_targets is not None:
            if cfg.method == "conceptact_transformer":
                concept = concept_ce_loss(out.concept_logits, concept_targets, cfg.label_smoothing)
            else:
                concept = heads_ce_loss(out.concept_logits, concept_targets, cfg.label_smoothing)
            terms["concept"] = concept
            if cfg.concept_weight:
                total = total + concept * cfg.concept_weight
        terms["total"] = total
        return terms

    def predict_chunk(self, proprio: np.ndarray, images: np.ndarray) -> np.ndarray:
        """Deterministic z = 0 chunk(s); inputs may be unbatched."""
        proprio = np.asarray(proprio)
        single = proprio.ndim == 1
        if single:
            proprio, images = proprio[None], np.asarray(images)[None]
        out = self.forward(proprio, images).actions.data
        return out[0] if single else out


def temporal_ensemble(buffer: list[ChunkPrediction], t: int, decay: float) -> np.ndarray:
    """Exponentially weighted mean of every buffered prediction for step ``t``;
    w_i = exp(-decay * i) with i = 0 the most recent query."""
    preds, weights = [], []
    for cp in buffer:
        i = t - cp.issued_at
        if 0 <= i < len(cp.actions):
            preds.append(cp.actions[i])
            weights.append(math.exp(-decay * i))
    if not preds:
        raise ValueError(f"no buffered prediction covers step {t}")
    w = np.asarray(weights)
    return (w[:, None] * np.asarray(preds, dtype=np.float64)).sum(0) / w.sum()


@dataclass
class RolloutTrace:
    digests: list[str] = field(default_factory=list)
    chunks: list[np.ndarray | None] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)

    def to_csv(self, path) -> Path:
        """One row per step; ``chunk`` is empty on steps without a policy query."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "observation", "chunk", "action"])
            for t, (d, c, a) in enumerate(zip(self.digests, self.chunks, self.actions)):
                chunk = "" if c is None else ";".join(" ".join(f"{v:.6g}" for v in row) for row in c)
                w.writerow([t, d, chunk, " ".join(f"{v:.6g}" for v in a)])
        return path


class EnsembledController:
    """Stateful per-rollout wrapper: query each step (or every ``chunk`` steps
    when ensembling is off) and emit the ensembled action."""

    def __init__(self, policy: Policy, ensemble: bool = True, decay: float | None = None):
        self.policy = policy
        self.ensemble = ensemble
        self.decay = policy.cfg.ensemble_decay if decay is None else decay
        self.reset()

    def reset(self, *_):
        self.t = 0
        self.buffer: list[ChunkPrediction] = []
        self.trace = RolloutTrace()

    def act(self, proprio: np.ndarray, images: np.ndarray) -> np.ndarray:
        cfg = self.policy.cfg
        if np.asarray(proprio).shape != (cfg.d_s,):
            raise ShapeError(f"observation must have {cfg.d_s} proprio entries")
        k = cfg.chunk
        chunk = None
        if self.ensemble or self.t % k == 0:
            chunk = self.policy.predict_chunk(proprio, images)
            self.buffer.append(ChunkPrediction(chunk, self.t))
            self.buffer = [c for c in self.buffer if self.t - c.issued_at < k]
        if self.ensemble:
            a = temporal_ensemble(self.buffer, self.t, self.decay)
        else:
            cp = self.buffer[-1]
            a = np.asarray(cp.actions[self.t - cp.issued_at], dtype=np.float64)
        digest = hashlib.sha1(np.ascontiguousarray(proprio).tobytes() + np.ascontiguousarray(images).tobytes())
        self.trace.digests.append(digest.hexdigest()[:12])
        self.trace.chunks.append(chunk)
        self.trace.actions.append(a)
        self.t += 1
        return a


def infer(policy: Policy, observation_stream, ensemble: bool = True) -> list[np.ndarray]:
    """Actions for a stream of (proprio, images) observations.  No concept input exists."""
    ctl = EnsembledController(policy, ensemble)
    return [ctl.act(p, im) for p, im in observation_stream]
