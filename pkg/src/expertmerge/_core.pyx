# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-token kernels. Semantics mirror ``_fallback`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, sqrt

cnp.import_array()

cdef double GELU_C = sqrt(2.0 / 3.141592653589793)


def route(const double[:, ::1] logits, Py_ssize_t k, bint renormalize):
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t t = logits.shape[1]
    cdef Py_ssize_t col, i, j, best
    cdef double mx, total, kept, bestval
    gates_arr = np.zeros((n, t), dtype=np.float64)
    idx_arr = np.empty((t, k), dtype=np.int64)
    probs_arr = np.empty(n, dtype=np.float64)
    taken_arr = np.empty(n, dtype=np.uint8)
    cdef double[:, ::1] gates = gates_arr
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    cdef double[::1] probs = probs_arr
    cdef unsigned char[::1] taken = taken_arr

    for col in range(t):
        mx = logits[0, col]
        for i in range(1, n):
            if logits[i, col] > mx:
                mx = logits[i, col]
        total = 0.0
        for i in range(n):
            probs[i] = exp(logits[i, col] - mx)
            total += probs[i]
        for i in range(n):
            probs[i] = probs[i] / total
            taken[i] = 0
        kept = 0.0
        for j in range(k):
            best = -1
            bestval = 0.0
            for i in range(n):
                if taken[i]:
                    continue
                if best < 0 or probs[i] > bestval:
                    best = i
                    bestval = probs[i]
            taken[best] = 1
            idx[col, j] = best
            gates[best, col] = bestval
            kept += bestval
        if renormalize:
            for j in range(k):
                gates[idx[col, j], col] = gates[idx[col, j], col] / kept
    return gates_arr, idx_arr


def gated_hidden(const double[:, ::1] g, const double[:, ::1] u, int activation):
    """activation: 0 = SiLU, 1 = tanh-approximated GELU."""
    cdef Py_ssize_t r = g.shape[0]
    cdef Py_ssize_t c = g.shape[1]
    cdef Py_ssize_t i, j
    cdef double x, a
    out_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(r):
        for j in range(c):
            x = g[i, j]
            if activation == 0:
                a = x / (1.0 + exp(-x))
            else:
                a = 0.5 * x * (1.0 + tanh(GELU_C * (x + 0.044715 * x * x * x)))
            out[i, j] = a * u[i, j]
    return out_arr


def cluster_gates(const double[:, ::1] gates, const cnp.int64_t[::1] refs, Py_ssize_t m):
    cdef Py_ssize_t n = gates.shape[0]
    cdef Py_ssize_t t = gates.shape[1]
    cdef Py_ssize_t i, col
    out_arr = np.zeros((m, t), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for col in range(t):
            out[refs[i], col] += gates[i, col]
    return out_arr
