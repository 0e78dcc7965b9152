"""Pure-numpy versions of the per-token kernels."""

import numpy as np

GELU_C = np.sqrt(2.0 / np.pi)


def route(logits, k, renormalize):
    shifted = logits - logits.max(axis=0, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=0, keepdims=True)
    # stable sort keeps the lower expert index first among equal scores
    idx = np.argsort(-probs, axis=0, kind="stable")[:k].T.copy()
    cols = np.arange(logits.shape[1])[:, None]
    gates = np.zeros_like(probs)
    gates[idx, cols] = probs[idx, cols]
    if renormalize:
        gates /= gates.sum(axis=0, keepdims=True)
    return gates, idx.astype(np.int64)


def gated_hidden(g, u, activation):
    if activation == 0:
        with np.errstate(over="ignore"):  # exp(-g) -> inf gives the right limit 0
            act = g / (1.0 + np.exp(-g))
    else:
        act = 0.5 * g * (1.0 + np.tanh(GELU_C * (g + 0.044715 * g**3)))
    return act * u


def cluster_gates(gates, refs, m):
    out = np.zeros((m, gates.shape[1]))
    np.add.at(out, refs, gates)
    return out
