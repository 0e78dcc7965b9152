"""Expert merging as output merging.

A cluster ``C`` with weights ``b`` is merged into one expert that approximates
``sum_j b_j E_j(x)``. Stacking the members' weights reproduces that sum
exactly but with an ``|C|``-times wider hidden layer; the compression triple
``(T1, T2, T3)`` folds it back to ``d_ff``:

    E'(x) = W'_D T1 (act(T2 W'_G x) * (T3 W'_U x))

``T2 = T3 = [b_1 I, ..., b_n I]`` are frequency-weighted averages. The
baselines fix ``T1 = [I; ...; I]`` (which is parameter averaging), while
``mergemoe`` fits ``T1`` by least squares on sample activations.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .clustering import assign_clusters
from .errors import ContractViolation, NumericalFailure
from .moe import (
    ExpertWeights,
    MoeLayer,
    MoeModel,
    check_tokens,
    collect_usage,
    model_forward,
    route,
    routed_mask,
)
from .numerics import DEFAULT_RTOL, least_squares, numerical_rank

METHODS = ("mergemoe", "msmoe", "average", "exact-output")


@dataclass(frozen=True, eq=False)
class StackedClusterWeights:
    w_g_stacked: np.ndarray  # (n * d_ff, d_model)
    w_u_stacked: np.ndarray
    w_d_concat: np.ndarray  # (d_model, n * d_ff), B weights folded in
    member_order: tuple

    @property
    def n_members(self):
        return len(self.member_order)

    def as_expert(self):
        return ExpertWeights(self.w_g_stacked, self.w_u_stacked, self.w_d_concat)


@dataclass(frozen=True, eq=False)
class CompressionTriple:
    t1: np.ndarray  # (n * d_ff, d_ff)
    t2: np.ndarray  # (d_ff, n * d_ff)
    t3: np.ndarray


@dataclass(frozen=True, eq=False)
class PQPair:
    p: np.ndarray  # (d_ff, T)
    q: np.ndarray  # (n * d_ff, T)

    def __post_init__(self):
        if self.p.shape[1] != self.q.shape[1]:
            raise ContractViolation("P and Q must have the same number of token columns")


def _check_cluster(experts, weights=None):
    experts = list(experts)
    if not experts:
        raise ContractViolation("cannot merge an empty cluster")
    shape = experts[0].w_gate.shape
    for e in experts[1:]:
        if e.w_gate.shape != shape:
            raise ContractViolation(
                f"cluster members have different shapes {shape} and {e.w_gate.shape}"
            )
    if weights is None:
        return experts, None
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.size != len(experts):
        raise ContractViolation(f"{len(experts)} members but {weights.size} weights")
    return experts, weights


def stack_cluster(experts, weights, member_order=None):
    experts, weights = _check_cluster(experts, weights)
    order = tuple(range(len(experts))) if member_order is None else tuple(member_order)
    return StackedClusterWeights(
        np.vstack([e.w_gate for e in experts]),
        np.vstack([e.w_up for e in experts]),
        np.hstack([w * e.w_down for w, e in zip(weights, experts)]),
        order,
    )


def build_t2_t3(weights, n_members, d_ff):
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.size != n_members:
        raise ContractViolation(f"expected {n_members} weights, got {weights.size}")
    t2 = np.hstack([w * np.eye(d_ff) for w in weights])
    return t2, t2.copy()


def msmoe_t1(n_members, d_ff):
    """The fixed ``[I; I; ...; I]`` column that turns the triple into parameter averaging."""
    return np.vstack([np.eye(d_ff)] * n_members)


def compute_pq(stacked, t2, t3, x_hat, activation="silu"):
    x_hat = check_tokens(x_hat, stacked.w_g_stacked.shape[1])
    g = stacked.w_g_stacked @ x_hat
    u = stacked.w_u_stacked @ x_hat
    p = kernels.gated_hidden(t2 @ g, t3 @ u, activation)
    q = kernels.gated_hidden(g, u, activation)
    return PQPair(p, q)


def solve_t1(pq, rtol=DEFAULT_RTOL):
    return least_squares(pq.p, pq.q, rtol)


def t1_residual(t1, pq):
    return float(np.linalg.norm(t1 @ pq.p - pq.q))


def triple_forward(stacked, triple, x, activation="silu"):
    """Reduced merged-expert output ``W'_D T1 (act(T2 W'_G x) * (T3 W'_U x))``."""
    hidden = kernels.gated_hidden(
        triple.t2 @ stacked.w_g_stacked @ x, triple.t3 @ stacked.w_u_stacked @ x, activation
    )
    return stacked.w_d_concat @ (triple.t1 @ hidden)


def merge_cluster_mergemoe(
    experts, weights, x_hat, activation="silu", singleton_shortcut=True, rtol=DEFAULT_RTOL
):
    experts, weights = _check_cluster(experts, weights)
    if len(experts) == 1 and singleton_shortcut:
        return experts[0]
    stacked = stack_cluster(experts, weights)
    t2, t3 = build_t2_t3(weights, len(experts), experts[0].d_ff)
    t1 = solve_t1(compute_pq(stacked, t2, t3, x_hat, activation), rtol)
    return ExpertWeights(t2 @ stacked.w_g_stacked, t3 @ stacked.w_u_stacked, stacked.w_d_concat @ t1)


def merge_cluster_msmoe(experts, weights):
    experts, weights = _check_cluster(experts, weights)
    if len(experts) == 1:
        return experts[0]
    return ExpertWeights(
        sum(w * e.w_gate for w, e in zip(weights, experts)),
        sum(w * e.w_up for w, e in zip(weights, experts)),
        sum(w * e.w_down for w, e in zip(weights, experts)),
    )


def merge_cluster_average(experts):
    experts, _ = _check_cluster(experts)
    if len(experts) == 1:
        return experts[0]
    n = len(experts)
    return merge_cluster_msmoe(experts, np.full(n, 1.0 / n))


def merge_cluster_exact_output(experts, weights):
    """Unreduced stacked expert; its hidden width is ``len(experts) * d_ff``."""
    return stack_cluster(experts, weights)


@dataclass(frozen=True, eq=False)
class MergedLayer:
    """M physical experts addressed through N references.

    ``expert_refs[j]`` is the merged expert that original expert ``j`` now
    points to, so the summation matrix stays implicit.
    """

    router: object
    expert_refs: np.ndarray
    experts: tuple
    method_tag: str
    shared_expert: ExpertWeights | None = None
    activation: str = "silu"
    plan: object = field(default=None, repr=False)

    def __post_init__(self):
        refs = np.asarray(self.expert_refs, dtype=np.int64)
        refs.setflags(write=False)
        object.__setattr__(self, "expert_refs", refs)
        object.__setattr__(self, "experts", tuple(self.experts))
        m = len(self.experts)
        if refs.shape != (self.router.n_experts,):
            raise ContractViolation(
                f"need {self.router.n_experts} expert references, got {refs.size}"
            )
        if m == 0 or refs.min() < 0 or refs.max() >= m or np.unique(refs).size != m:
            raise ContractViolation("expert references must cover every merged expert")
        d_model = self.router.w_r.shape[1]
        if any(e.d_model != d_model for e in self.experts):
            raise ContractViolation("merged experts disagree with router on d_model")
        kernels.activation_code(self.activation)

    @property
    def d_model(self):
        return self.router.w_r.shape[1]

    @property
    def n_experts(self):
        return self.router.n_experts

    @property
    def n_merged(self):
        return len(self.experts)

    @property
    def a_matrix(self):
        a = np.zeros((self.n_merged, self.n_experts))
        a[self.expert_refs, np.arange(self.n_experts)] = 1.0
        return a

    def cluster_gates(self, x):
        x = check_tokens(x, self.d_model)
        gates, topk = route(self.router, x)
        return kernels.cluster_gates(gates, self.expert_refs, self.n_merged), topk

    def forward(self, x):
        x = check_tokens(x, self.d_model)
        cgates, topk = self.cluster_gates(x)
        active = routed_mask(self.expert_refs[topk], self.n_merged)
        out = np.zeros_like(x)
        for c, expert in enumerate(self.experts):
            cols = np.flatnonzero(active[c])
            if cols.size == 0:
                continue
            xc = x[:, cols]
            hidden = kernels.gated_hidden(expert.w_gate @ xc, expert.w_up @ xc, self.activation)
            out[:, cols] += expert.w_down @ hidden * cgates[c, cols]
        if self.shared_expert is not None:
            e = self.shared_expert
            out += e.w_down @ kernels.gated_hidden(e.w_gate @ x, e.w_up @ x, self.activation)
        return out


def _cluster_tokens(layer, members, x_hat):
    _, topk = route(layer.router, x_hat)
    hit = np.isin(topk, members).any(axis=1)
    cols = np.flatnonzero(hit)
    return x_hat[:, cols] if cols.size else x_hat


def merge_layer(
    layer,
    plan,
    x_hat,
    method="mergemoe",
    singleton_shortcut=True,
    routed_tokens_only=False,
    rtol=DEFAULT_RTOL,
):
    """Merge ``layer`` according to ``plan`` using ``x_hat`` as its input samples."""
    if not isinstance(layer, MoeLayer):
        raise ContractViolation("only unmerged MoE layers can be merged")
    if method not in METHODS:
        raise ContractViolation(f"unknown method {method!r}; expected one of {METHODS}")
    if plan.n_original != layer.n_experts:
        raise ContractViolation(
            f"plan covers {plan.n_original} experts, layer has {layer.n_experts}"
        )
    x_hat = check_tokens(x_hat, layer.d_model)
    merged = []
    for c in range(plan.n_merged):
        members = plan.members(c)
        experts = [layer.experts[j] for j in members]
        weights = plan.weights(c)
        if method == "mergemoe":
            xs = _cluster_tokens(layer, members, x_hat) if routed_tokens_only else x_hat
            try:
                e = merge_cluster_mergemoe(
                    experts, weights, xs, layer.activation, singleton_shortcut, rtol
                )
            except NumericalFailure as exc:
                raise NumericalFailure(f"cluster {c} (experts {members.tolist()}): {exc}") from exc
        elif method == "msmoe":
            e = merge_cluster_msmoe(experts, weights)
        elif method == "average":
            e = merge_cluster_average(experts)
        else:
            e = merge_cluster_exact_output(experts, weights).as_expert()
        merged.append(e)
    return MergedLayer(
        layer.router,
        plan.assignment,
        merged,
        method,
        layer.shared_expert,
        layer.activation,
        plan,
    )


def merge_model(
    model,
    layer_range,
    experts_per_layer,
    x_samples,
    method="mergemoe",
    metric="cosine",
    singleton_shortcut=True,
    routed_tokens_only=False,
    order="back_to_front",
    rtol=DEFAULT_RTOL,
):
    """Merge the listed layers down to ``experts_per_layer`` experts each.

    Input activations of every target layer are captured in one pass over the
    original model, so the traversal order does not change the result.
    """
    targets = sorted(set(int(i) for i in layer_range))
    if not targets:
        return model
    if targets[0] < 0 or targets[-1] >= len(model.layers):
        raise ContractViolation(
            f"layer range {targets[0]}..{targets[-1]} outside model with {len(model.layers)} layers"
        )
    x_samples = check_tokens(x_samples, model.d_model)
    hs = model_forward(model, x_samples)
    if order == "back_to_front":
        targets.reverse()
    elif order != "front_to_back":
        raise ContractViolation(f"unknown order {order!r}")
    new_layers = {}
    for idx in targets:
        layer = model.layers[idx]
        if not isinstance(layer, MoeLayer):
            raise ContractViolation(f"layer {idx} is already merged")
        stats = collect_usage(layer, hs[idx])
        plan = assign_clusters(layer, stats, experts_per_layer, metric)
        new_layers[idx] = merge_layer(
            layer, plan, hs[idx], method, singleton_shortcut, routed_tokens_only, rtol
        )
    return model.replace_layers(new_layers)


def cluster_diagnostics(layer, plan, x_hat, rtol=DEFAULT_RTOL):
    """Per-cluster least-squares residuals and rank of P; used by tests and reports."""
    rows = []
    for c in range(plan.n_merged):
        members = plan.members(c)
        experts = [layer.experts[j] for j in members]
        weights = plan.weights(c)
        stacked = stack_cluster(experts, weights)
        d_ff = experts[0].d_ff
        t2, t3 = build_t2_t3(weights, len(experts), d_ff)
        pq = compute_pq(stacked, t2, t3, x_hat, layer.activation)
        t1 = solve_t1(pq, rtol)
        rank = numerical_rank(pq.p, rtol)
        rows.append(
            {
                "cluster": c,
                "members": members.tolist(),
                "rank_p": rank,
                "rank_deficient": rank < d_ff,
                "residual_ls": t1_residual(t1, pq),
                "residual_msmoe": t1_residual(msmoe_t1(len(experts), d_ff), pq),
            }
        )
    return rows
