"""Finite-difference suite over every layer and the end-to-end losses (float64)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .act import ActConfig, Policy
from .concept_layer import ConceptLayer, PredictionHeads, concept_ce_loss, heads_ce_loss, pool_predictions
from .concepts import ConceptClass, ConceptSchema
from .nn import tensor as T
from .nn.gradcheck import check_parameters, finite_difference_check
from .nn.layers import DropoutRNG, LayerNorm, Linear, MultiHeadAttention
from .nn.params import ParameterStore
from .nn.tensor import Tensor, precision

TOLERANCE = 1e-4

SMALL_SCHEMA = ConceptSchema((ConceptClass("color", ("red", "green", "blue")),
                              ConceptClass("target", ("A", "B"))))


def small_config(method: str = "act") -> ActConfig:
    """d=16, k=2 and S = 2 + 2 cameras * 4 patches = 10."""
    return ActConfig(method=method, d_model=16, heads=2, enc_layers=2, dec_layers=1, vae_layers=1, d_ff=24,
                     chunk=2, latent=3, patch=4, cameras=2, image_size=8, d_concept=8, dropout=0.1,
                     heads_dropout=0.2)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _store(seed: int) -> ParameterStore:
    return ParameterStore(seed=seed, dtype=np.float64)


def _worst(report: dict[str, float]) -> float:
    return max(report.values()) if report else 0.0


def _inputs(rng, B, cfg: ActConfig):
    proprio = rng.standard_normal((B, cfg.d_s))
    images = rng.integers(0, 256, (B, cfg.cameras, cfg.image_size, cfg.image_size, 3), dtype=np.uint8)
    actions = rng.standard_normal((B, cfg.chunk, cfg.d_a))
    mask = np.ones((B, cfg.chunk), bool)
    mask[0, -1] = False
    eta = rng.standard_normal((B, cfg.latent))
    concepts = [np.eye(c.cardinality)[rng.integers(0, c.cardinality, B)] for c in SMALL_SCHEMA.classes]
    return proprio, images, actions, mask, eta, concepts


def run_suite(seed: int = 0, max_coords: int = 12) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    d, S, B = 16, 10, 2
    with precision(np.float64):
        x0 = rng.standard_normal((B, S, d))

        st = _store(seed)
        lin = Linear(st, "lin", d, 8)
        X = Tensor(x0)
        results.append(CheckResult("linear.params", _worst(check_parameters(
            lambda: T.tsum(T.relu(lin(X)) * lin(X)), st, max_coords=max_coords))))
        results.append(CheckResult("linear.input", finite_difference_check(lambda x: T.exp(lin(x) * 0.3), [x0])))

        st = _store(seed + 1)
        ln = LayerNorm(st, "ln", d)
        st.set("ln.gamma", 1 + 0.1 * rng.standard_normal(d))
        st.set("ln.beta", 0.1 * rng.standard_normal(d))
        w = Tensor(rng.standard_normal((B, S, d)))
        results.append(CheckResult("layer_norm.params", _worst(check_parameters(
            lambda: T.tsum(ln(X) * w), st, max_coords=max_coords))))
        results.append(CheckResult("layer_norm.input", finite_difference_check(lambda x: ln(x) * w, [x0])))

        st = _store(seed + 2)
        mha = MultiHeadAttention(st, "mha", d, 2)
        m0 = rng.standard_normal((B, 4, d))
        results.append(CheckResult("attention.params", _worst(check_parameters(
            lambda: T.tsum(mha(X, Tensor(m0), causal=False) * w), st, max_coords=max_coords))))
        results.append(CheckResult("attention.inputs", finite_difference_check(
            lambda q, kv: mha(q, kv) * Tensor(w.data[:, :3]), [x0[:, :3], m0])))
        results.append(CheckResult("attention.causal", finite_difference_check(
            lambda q: mha(q, q, causal=True) * Tensor(w.data[:, :5]), [x0[:, :5]])))

        st = _store(seed + 3)
        layer = ConceptLayer(st, SMALL_SCHEMA, d)
        tg = [np.eye(3)[[0, 2]], np.eye(2)[[1, 0]]]
        def concept_loss():
            Y, maps = layer(X)
            return concept_ce_loss(pool_predictions(maps), tg, 0.1) + T.tsum(Y * w) * 0.1
        results.append(CheckResult("concept_layer.params", _worst(check_parameters(
            concept_loss, st, max_coords=max_coords))))
        results.append(CheckResult("concept_layer.input", finite_difference_check(
            lambda x: layer(x)[0] * w, [x0])))

        st = _store(seed + 4)
        heads = PredictionHeads(st, SMALL_SCHEMA, d, 8, dropout=0.2)
        h0 = rng.standard_normal((B, d))
        results.append(CheckResult("prediction_heads.params", _worst(check_parameters(
            lambda: heads_ce_loss(heads(Tensor(h0), DropoutRNG(seed, 0), True), tg, 0.1), st,
            max_coords=max_coords))))

        for method in ("act", "conceptact_transformer", "conceptact_heads"):
            cfg = small_config(method)
            st = _store(seed + 5)
            pol = Policy(cfg, st, SMALL_SCHEMA if method != "act" else None)
            proprio, images, actions, mask, eta, concepts = _inputs(rng, B, cfg)

            def loss():
                out = pol.forward(proprio, images, actions, mask, eta=eta, rng=DropoutRNG(seed, 1),
                                  training=True)
                return pol.losses(out, actions, mask, concepts)["total"]

            vae_names = [n for n in st.names() if n.startswith("vae.")]
            results.append(CheckResult(f"{method}.vae_head", _worst(check_parameters(
                loss, st, max_coords=max_coords, names=vae_names))))
            results.append(CheckResult(f"{method}.end_to_end", _worst(check_parameters(
                loss, st, max_coords=max_coords))))
    return results


def max_error(results: list[CheckResult]) -> float:
    return max(r.max_rel_error for r in results)
