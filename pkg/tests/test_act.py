import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conceptact.act import (ActConfig, ChunkPrediction, EnsembledController, LatentPosterior, Policy, act_loss,
                            infer, kl_divergence, patchify, temporal_ensemble)
from conceptact.concepts import ConceptClass, ConceptSchema
from conceptact.nn.params import ParameterStore
from conceptact.nn.tensor import ShapeError, Tensor, precision

SCHEMA = ConceptSchema((ConceptClass("color", ("r", "g", "b")), ConceptClass("target", ("A", "B"))))


def tiny(method="act", seed=0, dtype=np.float64, **kw):
    base = dict(method=method, d_model=16, heads=2, enc_layers=2, dec_layers=1, vae_layers=1, d_ff=24, chunk=3,
                latent=3, patch=4, cameras=1, image_size=8, d_concept=8)
    base.update(kw)
    cfg = ActConfig(**base)
    return Policy(cfg, ParameterStore(seed, dtype), None if method == "act" else SCHEMA)


def obs(policy, B=2, seed=0):
    cfg = policy.cfg
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((B, cfg.d_s))
    im = rng.integers(0, 256, (B, cfg.cameras, cfg.image_size, cfg.image_size, 3), dtype=np.uint8)
    return p, im


# -- configuration and tokens ----------------------------------------------------

@pytest.mark.parametrize("cams,S", [(1, 18), (2, 34), (0, 2)])
def test_sequence_length(cams, S):
    cfg = ActConfig(cameras=cams, image_size=32, patch=8)
    assert cfg.seq_len == S
    pol = Policy(ActConfig(d_model=8, heads=2, d_ff=8, chunk=2, latent=2, cameras=cams), ParameterStore(0))
    p = np.zeros((1, 4), np.float32)
    im = np.zeros((1, cams, 32, 32, 3), np.uint8)
    assert pol.build_input_sequence(np.zeros((1, 2)), p, im).shape == (1, S, 8)


def test_patch_divisibility_errors():
    with pytest.raises(ShapeError):
        ActConfig(image_size=30, patch=8)
    with pytest.raises(ShapeError):
        patchify(np.zeros((1, 1, 6, 6, 3)), 4)


def test_patchify_layout():
    img = np.arange(4 * 4 * 3).reshape(1, 1, 4, 4, 3)
    p = patchify(img, 2)
    assert p.shape == (1, 1, 4, 12)
    assert np.array_equal(p[0, 0, 1].reshape(2, 2, 3), img[0, 0, 0:2, 2:4])


def test_config_roundtrip_and_validation():
    cfg = ActConfig(method="conceptact_heads", d_model=32)
    assert ActConfig.from_dict(cfg.to_dict()) == cfg
    assert ActConfig.full_scale().d_model == 512
    with pytest.raises(ValueError):
        ActConfig(method="bogus")
    with pytest.raises(ValueError):
        ActConfig(d_model=10, heads=3)


# -- losses ---------------------------------------------------------------------------

def post(mu, lv):
    return LatentPosterior(Tensor(np.asarray(mu, float)), Tensor(np.asarray(lv, float)))


def test_kl_examples():
    assert kl_divergence(post([[0.0, 0.0]], [[0.0, 0.0]])).data == 0.0
    assert kl_divergence(post([[1.0]], [[0.0]])).data == pytest.approx(0.5)
    assert kl_divergence(post([[3.0, 0.0]], [[0.0, 0.0]])).data == pytest.approx(4.5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_kl_non_negative(v):
    assert kl_divergence(post([v[:3]], [v[3:]])).data >= -1e-12


def test_act_loss_examples():
    tgt = np.ones((1, 2, 2))
    mask = np.ones((1, 2))
    total, l1, kl = act_loss(Tensor(tgt), tgt, mask, post([[0.0]], [[0.0]]))
    assert total.data == 0.0
    total, l1, _ = act_loss(Tensor(tgt + 0.5), tgt, mask, None)
    assert l1.data == pytest.approx(0.5) and total.data == pytest.approx(0.5)


def test_masked_rows_do_not_count():
    pred = Tensor(np.zeros((1, 3, 2)))
    tgt = np.array([[[1.0, 1.0], [1.0, 1.0], [9.0, 9.0]]])
    _, l1, _ = act_loss(pred, tgt, np.array([[1, 1, 0]]), None)
    assert l1.data == pytest.approx(1.0)


# -- encoder / decoder -------------------------------------------------------------------

def test_posterior_deterministic_and_z_zero_at_inference():
    pol = tiny()
    p, im = obs(pol)
    acts = np.random.default_rng(1).standard_normal((2, 3, 4))
    with precision(np.float64):
        a = pol.vae_encode(p, acts)
        b = pol.vae_encode(p, acts)
        assert np.array_equal(a.mu.data, b.mu.data)
        out1 = pol.forward(p, im)
        out2 = pol.forward(p, im)
    assert out1.posterior is None
    assert np.array_equal(out1.actions.data, out2.actions.data)
    assert out1.actions.shape == (2, 3, 4)


def test_zeroed_encoder_layers_are_identity():
    pol = tiny()
    s = pol.store
    for i in range(2):
        for n in (f"enc.layer{i}.attn.o.W", f"enc.layer{i}.attn.o.b", f"enc.layer{i}.ffn.fc2.W",
                  f"enc.layer{i}.ffn.fc2.b"):
            s.set(n, np.zeros_like(s[n].data))
    p, im = obs(pol)
    with precision(np.float64):
        X = pol.build_input_sequence(np.zeros((2, 3)), p, im)
        Xn, maps = pol.encode(X)
    assert maps is None and np.array_equal(Xn.data, X.data)


def test_concept_outputs_per_method():
    for method in ("conceptact_transformer", "conceptact_heads"):
        pol = tiny(method)
        p, im = obs(pol)
        with precision(np.float64):
            out = pol.forward(p, im)
        assert [c.shape for c in out.concept_logits] == [(2, 3), (2, 2)]
    ct = tiny("conceptact_transformer")
    assert not any(n.startswith("enc.layer1") for n in ct.store.names())
    assert any(n.startswith("concept.") for n in ct.store.names())
    with pytest.raises(ValueError):
        Policy(ActConfig(method="conceptact_heads"), ParameterStore(0))


def test_concept_input_not_needed_for_inference():
    pol = tiny("conceptact_transformer")
    p, im = obs(pol, B=1)
    with precision(np.float64):
        chunk = pol.predict_chunk(p[0], im[0])
    assert chunk.shape == (3, 4) and np.isfinite(chunk).all()


# -- temporal ensembling ---------------------------------------------------------------------

def test_ensemble_examples():
    one = [ChunkPrediction(np.array([[2.0], [5.0]]), 0)]
    assert temporal_ensemble(one, 1, 0.01).tolist() == [5.0]
    two = [ChunkPrediction(np.array([[9.0], [1.0]]), 0), ChunkPrediction(np.array([[3.0]]), 1)]
    assert temporal_ensemble(two, 1, 0.0).tolist() == [2.0]
    # most recent query has i = 0; older query for the same step has i = 1
    buf = [ChunkPrediction(np.array([[0.0], [4.0]]), 0), ChunkPrediction(np.array([[1.0]]), 1)]
    assert temporal_ensemble(buf, 1, math.log(2)).tolist() == pytest.approx([2.0])
    with pytest.raises(ValueError):
        temporal_ensemble(one, 5, 0.01)


def stream(pol, n=7, seed=3):
    p, im = obs(pol, B=n, seed=seed)
    return list(zip(p, im))


def test_infer_deterministic_and_first_step_single_chunk():
    pol = tiny()
    with precision(np.float64):
        a = infer(pol, stream(pol))
        b = infer(pol, stream(pol))
        first = pol.predict_chunk(*stream(pol)[0])[0]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.allclose(a[0], first)


def test_without_ensembling_actions_are_raw_chunk_rows():
    pol = tiny()
    obs_ = stream(pol)
    with precision(np.float64):
        ctl = EnsembledController(pol, ensemble=False)
        acts = [ctl.act(p, im) for p, im in obs_]
        k = pol.cfg.chunk
        for t, a in enumerate(acts):
            base = (t // k) * k
            assert np.array_equal(a, pol.predict_chunk(*obs_[base])[t - base])
    assert sum(c is not None for c in ctl.trace.chunks) == math.ceil(len(obs_) / k)


def test_controller_rejects_bad_observation():
    pol = tiny()
    with pytest.raises(ShapeError):
        EnsembledController(pol).act(np.zeros(3), np.zeros((1, 8, 8, 3), np.uint8))
