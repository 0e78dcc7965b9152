"""Dense linear-algebra helpers used by every other module.

Matrices are plain ``float64`` numpy arrays; :func:`as_matrix` is the single
validation point that enforces the 2-D / finite invariants.
"""

import numpy as np

from .errors import ContractViolation, NumericalFailure

DEFAULT_RTOL = 1e-10
DEGENERATE_NORM = 1e-12


def as_matrix(m, name="matrix"):
    """Return ``m`` as a C-contiguous float64 2-D array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return arr


def frobenius_norm(m):
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def cosine_similarity(u, v, return_degenerate=False):
    """Cosine of the angle between two flattened arrays.

    A vector with norm below ``1e-12`` makes the pair degenerate; the
    similarity is then reported as 0.
    """
    u = np.ravel(np.asarray(u, dtype=np.float64))
    v = np.ravel(np.asarray(v, dtype=np.float64))
    if u.shape != v.shape:
        raise ContractViolation(f"length mismatch: {u.size} vs {v.size}")
    nu = np.sqrt(np.dot(u, u))
    nv = np.sqrt(np.dot(v, v))
    if nu < DEGENERATE_NORM or nv < DEGENERATE_NORM:
        return (0.0, True) if return_degenerate else 0.0
    sim = float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
    return (sim, False) if return_degenerate else sim


def pseudoinverse(m, rtol=DEFAULT_RTOL):
    """Moore-Penrose pseudoinverse through a thin SVD.

    Singular values below ``rtol * sigma_max`` are treated as zero.
    """
    if rtol <= 0:
        raise ContractViolation(f"rtol must be positive, got {rtol}")
    m = as_matrix(m)
    rows, cols = m.shape
    if m.size == 0:
        return np.zeros((cols, rows))
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}", m.shape) from exc
    cutoff = rtol * s[0] if s.size else 0.0
    keep = s > cutoff
    if not np.any(keep):
        return np.zeros((cols, rows))
    with np.errstate(over="ignore"):
        s_inv = 1.0 / s[keep]
    if not np.all(np.isfinite(s_inv)):
        raise NumericalFailure(
            f"pseudoinverse overflows: smallest kept singular value {s[keep][-1]:.3g}", m.shape
        )
    return (vt[keep].T * s_inv) @ u[:, keep].T


def numerical_rank(m, rtol=DEFAULT_RTOL):
    s = np.linalg.svd(as_matrix(m), compute_uv=False)
    if s.size == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def least_squares(p, q, rtol=DEFAULT_RTOL):
    """Return ``T = Q @ pinv(P)``, the minimiser of ``||T P - Q||_F``."""
    p = as_matrix(p, "P")
    q = as_matrix(q, "Q")
    if p.shape[1] != q.shape[1]:
        raise ContractViolation(
            f"P and Q need the same column count, got {p.shape} and {q.shape}"
        )
    return q @ pseudoinverse(p, rtol)
