"""Backend selection for the per-token kernels.

The compiled ``_core`` extension is used when it imports; otherwise, or when
``EXPERTMERGE_PURE_PYTHON=1`` is set, the numpy fallback is used. Both take
C-contiguous float64 arrays.
"""

import os

import numpy as np

from . import _fallback
from .errors import ContractViolation

ACTIVATIONS = {"silu": 0, "gelu": 1}

if os.environ.get("EXPERTMERGE_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"
else:
    _impl = _fallback
    BACKEND = "python"


def activation_code(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ContractViolation(f"unknown activation {name!r}") from None


def route(logits, k, renormalize=False, impl=None):
    """Softmax over rows of ``logits`` (N x T), keep the top ``k`` per column.

    Returns ``(gates, topk_index)`` with ``topk_index`` shaped (T, k).
    """
    impl = impl or _impl
    return impl.route(np.ascontiguousarray(logits, dtype=np.float64), int(k), bool(renormalize))


def gated_hidden(g, u, activation="silu", impl=None):
    """``act(g) * u`` elementwise."""
    impl = impl or _impl
    return impl.gated_hidden(
        np.ascontiguousarray(g, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64),
        activation_code(activation),
    )


def cluster_gates(gates, refs, m, impl=None):
    """Sum expert gates per cluster: the left-multiplication by the summation matrix."""
    impl = impl or _impl
    return impl.cluster_gates(
        np.ascontiguousarray(gates, dtype=np.float64),
        np.ascontiguousarray(refs, dtype=np.int64),
        int(m),
    )
