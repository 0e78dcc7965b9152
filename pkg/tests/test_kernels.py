import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expertmerge import _fallback, kernels

try:
    from expertmerge import _core
except ImportError:  # pragma: no cover
    _core = None

needs_core = pytest.mark.skipif(_core is None, reason="compiled extension not built")


def test_backend_flag():
    assert kernels.BACKEND in ("compiled", "python")


@needs_core
@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(1, 40), st.booleans(), st.integers(0, 2**31))
def test_route_parity(n, t, renorm, seed):
    rng = np.random.default_rng(seed)
    logits = 3.0 * rng.standard_normal((n, t))
    k = int(rng.integers(1, n + 1))
    g1, i1 = kernels.route(logits, k, renorm, impl=_core)
    g2, i2 = kernels.route(logits, k, renorm, impl=_fallback)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_allclose(g1, g2, rtol=1e-13, atol=1e-16)


@needs_core
def test_route_parity_with_ties():
    logits = np.array([[1.0, 0.0], [1.0, 2.0], [0.5, 2.0], [1.0, 2.0]])
    for impl in (_core, _fallback):
        _, idx = kernels.route(logits, 2, impl=impl)
        assert idx.tolist() == [[0, 1], [1, 2]]


@needs_core
@pytest.mark.parametrize("act", ["silu", "gelu"])
def test_gated_hidden_parity(act):
    rng = np.random.default_rng(2)
    g = 10 * rng.standard_normal((7, 33))
    u = rng.standard_normal((7, 33))
    np.testing.assert_allclose(
        kernels.gated_hidden(g, u, act, impl=_core),
        kernels.gated_hidden(g, u, act, impl=_fallback),
        rtol=1e-12, atol=1e-12,
    )


@needs_core
def test_silu_extremes():
    g = np.array([[-800.0, 800.0, 0.0]])
    u = np.ones_like(g)
    for impl in (_core, _fallback):
        out = kernels.gated_hidden(g, u, "silu", impl=impl)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [[0.0, 800.0, 0.0]], atol=1e-300)


@needs_core
def test_cluster_gates_parity():
    rng = np.random.default_rng(3)
    gates = rng.random((8, 20))
    refs = np.array([1, 0, 0, 3, 2, 1, 2, 3])
    a = kernels.cluster_gates(gates, refs, 4, impl=_core)
    b = kernels.cluster_gates(gates, refs, 4, impl=_fallback)
    np.testing.assert_allclose(a, b, rtol=1e-15)
    one_hot = np.zeros((4, 8))
    one_hot[refs, np.arange(8)] = 1
    np.testing.assert_allclose(a, one_hot @ gates, rtol=1e-15)


def test_non_contiguous_inputs():
    logits = np.asfortranarray(np.random.default_rng(4).standard_normal((5, 6)))
    g, idx = kernels.route(logits[:, ::2], 2)
    assert g.shape == (5, 3) and idx.shape == (3, 2)
