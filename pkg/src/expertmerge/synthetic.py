"""Seeded synthetic MoE models and token batches.

Tokens have unit-order column norms (gaussian entries with variance
``1 / d_model``, or exactly unit norm for ``sphere``), and expert weights are
scaled so a layer's output has unit-order norm relative to its input.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ContractViolation
from .moe import ExpertWeights, MoeLayer, MoeModel, Router

DISTRIBUTIONS = ("gaussian", "sphere")


@dataclass(frozen=True)
class ClusterStructure:
    """Experts ``j`` and ``j + n_prototypes`` share prototype ``j % n_prototypes``.

    The first expert of each prototype group is its leader; the others get
    router rows scaled by ``follower_router_gain`` so that they are routed to
    less often and the most-used experts cover every prototype.
    """

    n_prototypes: int
    noise_scale: float
    follower_router_gain: float = 0.3


@dataclass(frozen=True)
class GenConfig:
    d_model: int = 32
    d_ff: int = 16
    n_layers: int = 3
    n_experts: int = 8
    top_k: int = 2
    shared_expert: bool = False
    cluster_structure: ClusterStructure | None = None
    weight_scale: float = 1.0
    output_scale: float = 0.5
    router_scale: float = 3.0
    activation: str = "silu"
    seed: int = 0

    def __post_init__(self):
        cs = self.cluster_structure
        if isinstance(cs, dict):
            cs = ClusterStructure(**cs)
            object.__setattr__(self, "cluster_structure", cs)
        for name in ("d_model", "d_ff", "n_experts", "top_k"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        if self.n_layers < 0:
            raise ContractViolation("n_layers must be >= 0")
        if self.top_k > self.n_experts:
            raise ContractViolation(
                f"top_k ({self.top_k}) exceeds n_experts ({self.n_experts})"
            )
        if self.weight_scale <= 0 or self.output_scale <= 0 or self.router_scale < 0:
            raise ContractViolation(
                "weight_scale and output_scale must be > 0, router_scale >= 0"
            )
        if cs is not None:
            if cs.noise_scale < 0:
                raise ContractViolation("noise_scale must be >= 0")
            if not 1 <= cs.n_prototypes <= self.n_experts:
                raise ContractViolation("n_prototypes must be in [1, n_experts]")
            if cs.follower_router_gain < 0:
                raise ContractViolation("follower_router_gain must be >= 0")

    def replace(self, **changes):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return GenConfig(**data)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _random_expert(rng, cfg):
    gate_std = cfg.weight_scale
    down_std = cfg.output_scale / np.sqrt(cfg.d_ff * cfg.d_model)
    shape = (cfg.d_ff, cfg.d_model)
    return (
        rng.normal(0.0, gate_std, shape),
        rng.normal(0.0, gate_std, shape),
        rng.normal(0.0, down_std, shape[::-1]),
    )


def _layer(rng, cfg):
    cs = cfg.cluster_structure
    if cs is None:
        experts = [ExpertWeights(*_random_expert(rng, cfg)) for _ in range(cfg.n_experts)]
    else:
        protos = [_random_expert(rng, cfg) for _ in range(cs.n_prototypes)]
        experts = []
        for j in range(cfg.n_experts):
            proto = protos[j % cs.n_prototypes]
            noise = _random_expert(rng, cfg)
            experts.append(ExpertWeights(*(p + cs.noise_scale * z for p, z in zip(proto, noise))))
    w_r = rng.normal(0.0, cfg.router_scale, (cfg.n_experts, cfg.d_model))
    if cs is not None:
        w_r[cs.n_prototypes:] *= cs.follower_router_gain
    shared = ExpertWeights(*_random_expert(rng, cfg)) if cfg.shared_expert else None
    return MoeLayer(Router(w_r, cfg.top_k), experts, shared, cfg.activation)


def generate_model(cfg):
    rng = np.random.default_rng(cfg.seed)
    return MoeModel(cfg.d_model, tuple(_layer(rng, cfg) for _ in range(cfg.n_layers)))


def generate_tokens(d_model, t, seed, distribution="gaussian"):
    """``(d_model, t)`` batch; ``seed`` may be an int or a sequence of ints.

    Batches are prefix-stable: the first ``t`` columns for a given seed do not
    depend on how many columns are requested.
    """
    if t < 1:
        raise ContractViolation(f"token count must be >= 1, got {t}")
    if distribution not in DISTRIBUTIONS:
        raise ContractViolation(f"unknown distribution {distribution!r}")
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0 / np.sqrt(d_model), (t, d_model)).T.copy()
    if distribution == "sphere":
        x /= np.linalg.norm(x, axis=0, keepdims=True)
    return x
