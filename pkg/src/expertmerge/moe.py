"""SwiGLU experts, top-K softmax routing, MoE layers and residual stacks.

Token batches are ``(d_model, T)`` matrices whose columns are tokens.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractViolation
from .numerics import as_matrix


@dataclass(frozen=True, eq=False)
class ExpertWeights:
    """One SwiGLU expert: ``w_down @ (act(w_gate @ x) * (w_up @ x))``."""

    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray

    def __post_init__(self):
        g = as_matrix(self.w_gate, "w_gate")
        u = as_matrix(self.w_up, "w_up")
        d = as_matrix(self.w_down, "w_down")
        if g.shape != u.shape:
            raise ContractViolation(f"w_gate {g.shape} and w_up {u.shape} differ")
        if d.shape != (g.shape[1], g.shape[0]):
            raise ContractViolation(
                f"w_down must be {(g.shape[1], g.shape[0])}, got {d.shape}"
            )
        for name, arr in (("w_gate", g), ("w_up", u), ("w_down", d)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d_model(self):
        return self.w_gate.shape[1]

    @property
    def d_ff(self):
        return self.w_gate.shape[0]

    @property
    def n_params(self):
        return 3 * self.w_gate.size

    def same_weights(self, other):
        return (
            np.array_equal(self.w_gate, other.w_gate)
            and np.array_equal(self.w_up, other.w_up)
            and np.array_equal(self.w_down, other.w_down)
        )


@dataclass(frozen=True, eq=False)
class Router:
    w_r: np.ndarray
    top_k: int
    renormalize: bool = False

    def __post_init__(self):
        w = as_matrix(self.w_r, "w_r")
        w.setflags(write=False)
        object.__setattr__(self, "w_r", w)
        if not 1 <= self.top_k <= w.shape[0]:
            raise ContractViolation(
                f"top_k must be in [1, {w.shape[0]}], got {self.top_k}"
            )

    @property
    def n_experts(self):
        return self.w_r.shape[0]


@dataclass(frozen=True, eq=False)
class MoeLayer:
    router: Router
    experts: tuple
    shared_expert: ExpertWeights | None = None
    activation: str = "silu"

    def __post_init__(self):
        experts = tuple(self.experts)
        object.__setattr__(self, "experts", experts)
        if not experts:
            raise ContractViolation("a layer needs at least one expert")
        if self.router.n_experts != len(experts):
            raise ContractViolation(
                f"router has {self.router.n_experts} rows for {len(experts)} experts"
            )
        shape = experts[0].w_gate.shape
        if any(e.w_gate.shape != shape for e in experts):
            raise ContractViolation("all experts of a layer must share one shape")
        if self.router.w_r.shape[1] != shape[1]:
            raise ContractViolation("router and experts disagree on d_model")
        if self.shared_expert is not None and self.shared_expert.d_model != shape[1]:
            raise ContractViolation("shared expert d_model mismatch")
        kernels.activation_code(self.activation)

    @property
    def d_model(self):
        return self.experts[0].d_model

    @property
    def n_experts(self):
        return len(self.experts)

    def forward(self, x):
        return layer_forward(self, x)


@dataclass(frozen=True, eq=False)
class MoeModel:
    d_model: int
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        for i, layer in enumerate(layers):
            if layer.d_model != self.d_model:
                raise ContractViolation(
                    f"layer {i} has d_model {layer.d_model}, model has {self.d_model}"
                )

    def replace_layers(self, new_layers):
        layers = list(self.layers)
        for idx, layer in new_layers.items():
            layers[idx] = layer
        return MoeModel(self.d_model, tuple(layers))


@dataclass(frozen=True)
class UsageStats:
    counts: np.ndarray
    frequencies: np.ndarray

    @classmethod
    def from_counts(cls, counts):
        counts = np.asarray(counts, dtype=np.int64)
        total = counts.sum()
        if total > 0:
            freqs = counts / total
        else:
            freqs = np.full(counts.shape, 1.0 / counts.size)
        return cls(counts, freqs)


def check_tokens(x, d_model):
    x = as_matrix(x, "token batch")
    if x.shape[0] != d_model:
        raise ContractViolation(f"tokens have {x.shape[0]} rows, expected d_model={d_model}")
    if x.shape[1] < 1:
        raise ContractViolation("token batch must hold at least one token")
    return x


def expert_hidden(e, x, activation="silu"):
    """Intermediate activation ``act(W_G x) * (W_U x)``, shape (d_ff, T)."""
    return kernels.gated_hidden(e.w_gate @ x, e.w_up @ x, activation)


def expert_forward(e, x, activation="silu"):
    x = check_tokens(x, e.d_model)
    return e.w_down @ expert_hidden(e, x, activation)


def route(router, x):
    """Masked gates (N x T) and per-token selected experts (T x K)."""
    if x.shape[0] != router.w_r.shape[1]:
        raise ContractViolation("router and tokens disagree on d_model")
    return kernels.route(router.w_r @ x, router.top_k, router.renormalize)


def router_gates(router, x):
    x = check_tokens(x, router.w_r.shape[1])
    return route(router, x)[0]


def routed_mask(topk_index, n_experts):
    """Boolean (N x T) membership of each expert in each token's top-K set."""
    t = topk_index.shape[0]
    mask = np.zeros((n_experts, t), dtype=bool)
    mask[topk_index, np.arange(t)[:, None]] = True
    return mask


def layer_forward(layer, x):
    if not isinstance(layer, MoeLayer):
        return layer.forward(x)
    x = check_tokens(x, layer.d_model)
    gates, topk = route(layer.router, x)
    mask = routed_mask(topk, layer.n_experts)
    out = np.zeros_like(x)
    for i, expert in enumerate(layer.experts):
        cols = np.flatnonzero(mask[i])
        if cols.size == 0:
            continue
        xi = x[:, cols]
        out[:, cols] += expert.w_down @ expert_hidden(expert, xi, layer.activation) * gates[i, cols]
    if layer.shared_expert is not None:
        out += layer.shared_expert.w_down @ expert_hidden(layer.shared_expert, x, layer.activation)
    return out


def dense_layer_forward(layer, x):
    """Every expert evaluated on every token, then ``Y @ gates``; the reference form."""
    x = check_tokens(x, layer.d_model)
    gates = router_gates(layer.router, x)
    out = np.zeros_like(x)
    for i, expert in enumerate(layer.experts):
        out += expert_forward(expert, x, layer.activation) * gates[i]
    if layer.shared_expert is not None:
        out += expert_forward(layer.shared_expert, x, layer.activation)
    return out


def model_forward(model, x):
    """Residual pass; returns ``[h_0, ..., h_L]`` where ``h_t`` feeds layer ``t``."""
    h = check_tokens(x, model.d_model)
    hs = [h]
    for layer in model.layers:
        h = h + layer_forward(layer, h)
        hs.append(h)
    return hs


def collect_usage(layer, x):
    x = check_tokens(x, layer.d_model)
    _, topk = route(layer.router, x)
    counts = np.bincount(topk.ravel(), minlength=layer.n_experts)
    return UsageStats.from_counts(counts)
