"""Numerical checks of the frequency-weight optimality result.

For a fixed clustering the merge error reduces to the quadratic

    sum_i f_i (u_i - e_i)^T W (u_i - e_i),   W = Y0^T Y0,  u_i = (B A)[:, i]

which separates per cluster into ``F_c(a) = S_c a^T W_cc a - 2 (W_cc f_c)^T a``
(constant dropped). Frequency ratios ``f_c / S_c`` zero its gradient. The
oracle here solves the normal equations of each ``F_c`` independently.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .clustering import build_a, build_b
from .errors import ContractViolation
from .numerics import as_matrix, pseudoinverse


@dataclass(frozen=True, eq=False)
class TheoremInstance:
    y0: np.ndarray  # (K_rows, N)
    f: np.ndarray  # (N,) positive usage counts
    assignment: np.ndarray  # (N,) cluster index per expert
    w: np.ndarray = field(init=False)
    a_matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        y0 = as_matrix(self.y0, "y0")
        f = np.asarray(self.f, dtype=np.float64)
        assignment = np.asarray(self.assignment, dtype=np.int64)
        n = y0.shape[1]
        if f.shape != (n,) or assignment.shape != (n,):
            raise ContractViolation("f and assignment need one entry per column of y0")
        if np.any(f <= 0):
            raise ContractViolation("usage counts must be positive")
        m = int(assignment.max()) + 1
        if assignment.min() < 0 or np.unique(assignment).size != m:
            raise ContractViolation("every cluster must be non-empty")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "w", y0.T @ y0)
        object.__setattr__(self, "a_matrix", build_a(assignment, m))

    @property
    def n(self):
        return self.y0.shape[1]

    @property
    def m(self):
        return self.a_matrix.shape[0]

    def cluster(self, c):
        return np.flatnonzero(self.assignment == c)

    @property
    def clusters(self):
        return [self.cluster(c) for c in range(self.m)]

    def to_dict(self):
        return {
            "y0": self.y0.tolist(),
            "f": self.f.tolist(),
            "assignment": self.assignment.tolist(),
        }


@dataclass(frozen=True)
class ObjectiveValue:
    value: float
    per_expert_terms: np.ndarray


def random_instance(rng, n, m, k_rows=None):
    """Standard-normal Y0, f ~ U(0.1, 1], random assignment with no empty cluster."""
    if not 1 <= m <= n:
        raise ContractViolation(f"need 1 <= m <= n, got m={m}, n={n}")
    if k_rows is None:
        k_rows = int(rng.integers(1, n + 3))
    assignment = np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)])
    rng.shuffle(assignment)
    f = 1.0 - 0.9 * rng.random(n)
    return TheoremInstance(rng.standard_normal((k_rows, n)), f, assignment)


def quasi_frobenius(per_expert_outputs):
    """Squared Frobenius norm of each expert's output."""
    outputs = list(per_expert_outputs)
    if not outputs:
        raise ContractViolation("need at least one expert output")
    shape = np.shape(outputs[0])
    if any(np.shape(o) != shape for o in outputs):
        raise ContractViolation("expert outputs must share one shape")
    return np.array([float(np.sum(np.square(o))) for o in outputs])


def _check_support(inst, b):
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (inst.n, inst.m):
        raise ContractViolation(f"B must be {(inst.n, inst.m)}, got {b.shape}")
    off = (b != 0) & (inst.a_matrix.T == 0)
    if np.any(off):
        j, c = np.argwhere(off)[0]
        raise ContractViolation(
            f"B[{j}, {c}] = {b[j, c]!r} but expert {j} belongs to cluster {inst.assignment[j]}"
        )
    return b


def objective(inst, b):
    b = _check_support(inst, b)
    diff = b @ inst.a_matrix - np.eye(inst.n)
    terms = inst.f * np.einsum("ki,kl,li->i", diff, inst.w, diff)
    return ObjectiveValue(float(terms.sum()), terms)


def optimal_b(inst):
    return build_b(inst.assignment, inst.f, inst.m)[0]


def oracle_minimize(inst):
    """Minimise each cluster's quadratic through its normal equations."""
    b = np.zeros((inst.n, inst.m))
    for c, idx in enumerate(inst.clusters):
        w_cc = inst.w[np.ix_(idx, idx)]
        s = inst.f[idx].sum()
        rhs = w_cc @ inst.f[idx]
        b[idx, c] = pseudoinverse(s * w_cc) @ rhs
    return b


def _coefficients(inst, c, a):
    idx = inst.cluster(c)
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == inst.n:
        outside = np.setdiff1d(np.arange(inst.n), idx)
        if np.any(a[outside] != 0):
            raise ContractViolation(f"vector is not supported on cluster {c}")
        return idx, a[idx], True
    if a.size != idx.size:
        raise ContractViolation(f"cluster {c} has {idx.size} members, got {a.size} coefficients")
    return idx, a, False


def f_i(inst, c, a):
    """Cluster objective ``F_c`` without the constant term."""
    idx, coef, _ = _coefficients(inst, c, a)
    w_cc = inst.w[np.ix_(idx, idx)]
    s = inst.f[idx].sum()
    return float(s * coef @ w_cc @ coef - 2.0 * (w_cc @ inst.f[idx]) @ coef)


def gradient_f_i(inst, c, a):
    idx, coef, full = _coefficients(inst, c, a)
    w_cc = inst.w[np.ix_(idx, idx)]
    s = inst.f[idx].sum()
    grad = 2.0 * s * (w_cc @ coef) - 2.0 * (w_cc @ inst.f[idx])
    if not full:
        return grad
    out = np.zeros(inst.n)
    out[idx] = grad
    return out


def central_difference(fun, x, step=1e-6):
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        grad[j] = (fun(xp) - fun(xm)) / (2.0 * step)
    return grad


def random_feasible_b(inst, rng):
    return rng.standard_normal((inst.n, inst.m)) * inst.a_matrix.T


@dataclass
class TheoremReport:
    trials: int
    passes: int = 0
    worst_stationarity_gap: float = 0.0
    worst_value_gap: float = 0.0
    worst_dominance_margin: float = float("inf")
    failed_instances: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def verify_theorem(trials, seed=0, max_n=6, max_m=3, probes=100,
                   stationarity_tol=1e-10, value_rtol=1e-8):
    """Run random instances through the stationarity, dominance and oracle checks."""
    if trials < 1:
        raise ContractViolation(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    report = TheoremReport(trials)
    for trial in range(trials):
        n = int(rng.integers(2, max_n + 1))
        m = int(rng.integers(1, min(max_m, n) + 1))
        inst = random_instance(rng, n, m)
        b_star = optimal_b(inst)
        value = objective(inst, b_star).value
        scale = 1.0 + abs(value)

        gap = max(
            float(np.linalg.norm(gradient_f_i(inst, c, b_star[idx, c])))
            for c, idx in enumerate(inst.clusters)
        )
        oracle_value = objective(inst, oracle_minimize(inst)).value
        value_gap = abs(value - oracle_value) / scale
        margin = min(
            objective(inst, random_feasible_b(inst, rng)).value - value for _ in range(probes)
        )

        failures = []
        if gap > stationarity_tol:
            failures.append("stationarity")
        if margin < -1e-10 * scale:
            failures.append("dominance")
        if value_gap > value_rtol:
            failures.append("oracle")

        report.worst_stationarity_gap = max(report.worst_stationarity_gap, gap)
        report.worst_value_gap = max(report.worst_value_gap, value_gap)
        report.worst_dominance_margin = min(report.worst_dominance_margin, margin)
        if failures:
            report.failed_instances.append(
                {"trial": trial, "checks": failures, "instance": inst.to_dict()}
            )
        else:
            report.passes += 1
    return report
