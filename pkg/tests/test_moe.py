import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_expert, make_layer
from expertmerge import ExpertWeights, MoeLayer, MoeModel, Router, collect_usage, model_forward
from expertmerge.errors import ContractViolation
from expertmerge.moe import dense_layer_forward, expert_forward, layer_forward, route


def test_silu_scalar_oracle():
    e = ExpertWeights(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))
    # silu(1) = 1 / (1 + e^-1)
    assert expert_forward(e, np.ones((1, 1)))[0, 0] == pytest.approx(0.7310585786300049, abs=1e-15)
    assert expert_forward(e, np.zeros((1, 1)))[0, 0] == 0.0


def test_gelu_scalar_oracle():
    e = ExpertWeights(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))
    # tanh-approximate gelu(1)
    assert expert_forward(e, np.ones((1, 1)), "gelu")[0, 0] == pytest.approx(0.8411919906082768, abs=1e-14)


def test_topk_softmax_oracle():
    # logits (0, ln 2, ln 3): softmax (1/6, 1/3, 1/2), keep top 2
    router = Router(np.array([[0.0], [np.log(2.0)], [np.log(3.0)]]), 2)
    gates, topk = route(router, np.ones((1, 1)))
    np.testing.assert_allclose(gates[:, 0], [0.0, 1 / 3, 1 / 2], atol=1e-15)
    assert topk.tolist() == [[2, 1]]


def test_renormalize_flag():
    router = Router(np.array([[0.0], [np.log(2.0)], [np.log(3.0)]]), 2, renormalize=True)
    gates, _ = route(router, np.ones((1, 1)))
    np.testing.assert_allclose(gates[:, 0], [0.0, 0.4, 0.6], atol=1e-15)


def test_ties_go_to_lowest_index():
    router = Router(np.zeros((4, 2)), 2)
    gates, topk = route(router, np.ones((2, 3)))
    assert topk.tolist() == [[0, 1]] * 3
    np.testing.assert_array_equal(gates[:, 0], [0.25, 0.25, 0.0, 0.0])


def test_top_k_bounds():
    with pytest.raises(ContractViolation):
        Router(np.zeros((3, 2)), 4)
    with pytest.raises(ContractViolation):
        Router(np.zeros((3, 2)), 0)


def test_sparse_matches_dense(rng):
    for shared in (False, True):
        for act in ("silu", "gelu"):
            layer = make_layer(rng, shared=shared, activation=act)
            x = rng.standard_normal((6, 40))
            np.testing.assert_allclose(layer_forward(layer, x), dense_layer_forward(layer, x), atol=1e-12)


def test_worked_gating_example():
    # logits chosen so that only experts 3 and 6 (1-based) survive top-2
    probs = np.array([0.05, 0.05, 0.5, 0.05, 0.05, 0.2, 0.05, 0.05])
    router = Router(np.log(probs)[:, None], 2)
    gates, _ = route(router, np.ones((1, 1)))
    np.testing.assert_allclose(gates[:, 0], [0, 0, 0.5, 0, 0, 0.2, 0, 0], atol=1e-15)


def test_usage_counts_sum(rng):
    layer = make_layer(rng, n=5, top_k=3)
    stats = collect_usage(layer, rng.standard_normal((6, 70)))
    assert stats.counts.sum() == 3 * 70
    assert stats.frequencies.sum() == pytest.approx(1.0)


def test_residual_stream(small_model, rng):
    x = rng.standard_normal((6, 10))
    hs = model_forward(small_model, x)
    assert len(hs) == 4
    np.testing.assert_array_equal(hs[0], x)
    np.testing.assert_allclose(hs[1], x + layer_forward(small_model.layers[0], x))


def test_contract_errors(rng):
    e = make_expert(rng, 4, 3)
    with pytest.raises(ContractViolation):
        ExpertWeights(e.w_gate, e.w_up[:2], e.w_down)
    with pytest.raises(ContractViolation):
        MoeLayer(Router(np.zeros((2, 4)), 1), (e,))
    with pytest.raises(ContractViolation):
        MoeLayer(Router(np.zeros((1, 4)), 1), (e,), activation="relu")
    with pytest.raises(ContractViolation):
        expert_forward(e, np.ones((5, 2)))
    with pytest.raises(ContractViolation):
        MoeModel(5, (MoeLayer(Router(np.zeros((1, 4)), 1), (e,)),))


def test_weights_read_only(rng):
    e = make_expert(rng, 3, 2)
    with pytest.raises(ValueError):
        e.w_gate[0, 0] = 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 30), st.integers(0, 2**31))
def test_gates_properties(k, t, seed):
    rng = np.random.default_rng(seed)
    n = 6
    router = Router(rng.standard_normal((n, 4)), k)
    gates, topk = route(router, rng.standard_normal((4, t)))
    assert ((gates > 0).sum(axis=0) == k).all()
    assert (gates.sum(axis=0) <= 1 + 1e-12).all()
    for col in range(t):
        assert sorted(topk[col]) == sorted(np.flatnonzero(gates[:, col]))
