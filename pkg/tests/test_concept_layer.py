import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conceptact.concept_layer import (ConceptLayer, PredictionHeads, SchemaMismatch, concept_accuracy,
                                      concept_ce_loss, heads_ce_loss, pool_predictions, prediction_heads_forward,
                                      smoothed_targets, total_loss)
from conceptact.concepts import ConceptClass, ConceptError, ConceptSchema
from conceptact.nn.gradcheck import check_parameters
from conceptact.nn import tensor as T
from conceptact.nn.params import ParameterStore
from conceptact.nn.tensor import ShapeError, Tensor, precision

ONE = ConceptSchema((ConceptClass("c", ("a", "b")),))
TWO = ConceptSchema((ConceptClass("color", ("r", "g", "b")), ConceptClass("zone", ("A", "B"))))


def layer64(schema, d=4, seed=0, **kw):
    store = ParameterStore(seed, np.float64)
    return store, ConceptLayer(store, schema, d, **kw)


def test_identity_projection_passes_input_through():
    _, layer = layer64(TWO, proj_init="identity")
    X = np.random.default_rng(1).standard_normal((2, 5, 4))
    with precision(np.float64):
        Y, maps = layer(Tensor(X))
    assert np.array_equal(Y.data, X)
    assert [m.shape for m in maps.maps] == [(2, 5, 3), (2, 5, 2)]


def test_single_class_hand_example():
    store, layer = layer64(ONE, d=2)
    store.set("concept.c.E", np.array([[1.0, 0.0], [0.0, 2.0]]))
    for w in ("WQ", "WK", "WV"):
        store.set(f"concept.c.{w}", np.eye(2))
    W = np.zeros((4, 2))
    W[2:] = np.eye(2)                      # keep only the concept output
    store.set("concept.proj.W", W)
    store.set("concept.proj.b", np.array([0.5, 0.0]))
    with precision(np.float64):
        Y, maps = layer(Tensor(np.array([[1.0, 1.0]])))
    # scores [1, 2] / sqrt(2)
    e = np.exp(np.array([1.0, 2.0]) / math.sqrt(2))
    alpha = e / e.sum()
    assert np.allclose(maps.maps[0].data, [alpha], atol=1e-14)
    out = alpha[0] * np.array([1.0, 0.0]) + alpha[1] * np.array([0.0, 2.0])
    assert np.allclose(Y.data, [out + [0.5, 0.0]], atol=1e-14)


def test_classes_are_independent():
    store, layer = layer64(TWO)
    X = Tensor(np.random.default_rng(2).standard_normal((1, 3, 4)))
    with precision(np.float64):
        _, before = layer(X)
        E = store["concept.zone.E"].data.copy()
        E[0] += 1.0
        store.set("concept.zone.E", E)
        _, after = layer(X)
    assert np.array_equal(before.maps[0].data, after.maps[0].data)
    assert not np.allclose(before.maps[1].data, after.maps[1].data)


def test_rejects_wrong_width():
    _, layer = layer64(ONE)
    with pytest.raises(ShapeError):
        layer(Tensor(np.zeros((1, 2, 5))))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7))
def test_attention_rows_and_pooled_sum_to_one(seed, S):
    _, layer = layer64(TWO, seed=seed)
    X = Tensor(np.random.default_rng(seed).standard_normal((2, S, 4)) * 3)
    with precision(np.float64):
        _, maps = layer(X)
    for m, p in zip(maps.maps, pool_predictions(maps)):
        assert np.allclose(m.data.sum(-1), 1.0, atol=1e-12)
        assert np.allclose(p.data.sum(-1), 1.0, atol=1e-12)


def test_pool_examples():
    assert np.allclose(pool_predictions([Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))])[0].data, [0.5, 0.5])
    u = np.array([0.2, 0.3, 0.5])
    assert np.allclose(pool_predictions([Tensor(np.tile(u, (4, 1)))])[0].data, u)
    assert np.allclose(pool_predictions([Tensor(np.full((3, 4), 0.25))])[0].data, 0.25)
    with pytest.raises(ShapeError):
        pool_predictions([Tensor(np.zeros((0, 2)))])


def test_smoothed_target_examples():
    c4 = np.array([0, 0, 1, 0])
    assert np.array_equal(smoothed_targets(c4, 0.0), c4)
    assert np.allclose(smoothed_targets(c4, 0.1), [0.025, 0.025, 0.925, 0.025])
    assert np.allclose(smoothed_targets([1, 0], 0.1), [0.95, 0.05])
    for eps in (0.0, 0.1):
        assert smoothed_targets(c4, eps).sum() == 1.0
    with pytest.raises(ConceptError):
        smoothed_targets([1, 1], 0.1)
    with pytest.raises(ValueError):
        smoothed_targets([1, 0], 1.0)


def test_concept_loss_uniform_is_log_n():
    for n in (2, 3, 5):
        pred = [Tensor(np.full((1, n), 1.0 / n))]
        tgt = [np.eye(n)[[0]]]
        assert concept_ce_loss(pred, tgt, 0.0).data == pytest.approx(math.log(n))


def test_concept_loss_two_class_hand_values():
    p1, p2 = np.array([[0.7, 0.2, 0.1]]), np.array([[0.4, 0.6]])
    t1, t2 = np.array([[1, 0, 0]]), np.array([[0, 1]])
    got = concept_ce_loss([Tensor(p1), Tensor(p2)], [t1, t2], 0.1).data

    def ce(p, t, eps):
        q = (1 - eps) * t + eps / t.shape[-1]
        lsm = p - np.log(np.exp(p).sum())
        return -(q * lsm).sum()
    assert got == pytest.approx(ce(p1[0], t1[0], 0.1) + ce(p2[0], t2[0], 0.1), rel=1e-12)


def test_concept_loss_schema_mismatch():
    with pytest.raises(SchemaMismatch):
        concept_ce_loss([Tensor(np.full((1, 2), 0.5))], [np.eye(3)[[0]]], 0.1)
    with pytest.raises(SchemaMismatch):
        concept_ce_loss([Tensor(np.full((1, 2), 0.5))], [np.eye(2)[[0]], np.eye(2)[[0]]], 0.1)


def test_total_loss_examples():
    assert total_loss(Tensor(np.array(1.0)), Tensor(np.array(0.5)), 0.2).data == pytest.approx(1.1)
    act = Tensor(np.array(0.7))
    assert total_loss(act, Tensor(np.array(3.0)), 0.0) is act


def test_heads_zero_hidden_gives_output_bias():
    store = ParameterStore(0, np.float64)
    heads = PredictionHeads(store, TWO, 4, d_concept=3)
    store.set("heads.color.hidden.W", np.zeros((4, 3)))
    store.set("heads.color.hidden.b", np.zeros(3))
    with precision(np.float64):
        logits = prediction_heads_forward(Tensor(np.ones((2, 4))), heads, TWO)
    assert np.allclose(logits[0].data, store["heads.color.out.b"].data)
    assert logits[1].shape == (2, 2)
    with pytest.raises(SchemaMismatch):
        prediction_heads_forward(Tensor(np.ones((2, 4))), heads, ONE)


def test_heads_loss_examples():
    assert heads_ce_loss([Tensor(np.zeros((1, 3)))], [np.eye(3)[[1]]], 0.0).data == pytest.approx(math.log(3))
    peaked = Tensor(np.array([[40.0, -40.0]]))
    assert heads_ce_loss([peaked], [np.array([[1, 0]])], 0.0).data < 1e-12
    lg = np.array([[0.3, -0.2]])
    q = np.array([0.05, 0.95])
    hand = -(q * (lg[0] - np.log(np.exp(lg[0]).sum()))).sum()
    assert heads_ce_loss([Tensor(lg)], [np.array([[0, 1]])], 0.1).data == pytest.approx(hand, rel=1e-12)


def test_concept_layer_gradients():
    store, layer = layer64(TWO)
    X = np.random.default_rng(3).standard_normal((2, 3, 4))
    tgt = [np.eye(3)[[0, 2]], np.eye(2)[[1, 0]]]
    w = Tensor(np.random.default_rng(4).standard_normal((2, 3, 4)))

    def loss():
        Y, maps = layer(Tensor(X))
        return T.tsum(Y * w) + concept_ce_loss(pool_predictions(maps), tgt, 0.1)
    rep = check_parameters(loss, store, max_coords=6)
    assert max(rep.values()) < 1e-4


def test_concept_accuracy():
    pred = [np.array([[0.6, 0.4], [0.2, 0.8]])]
    assert concept_accuracy(pred, [np.array([[1, 0], [1, 0]])]) == [0.5]
