"""Expert merging for mixture-of-experts layers, framed as merging expert outputs."""

from .clustering import ClusterPlan, assign_clusters, build_a, build_b, expert_distance, select_centers
from .errors import CheckpointError, ContractViolation, NumericalFailure, SchemaVersionError
from .kernels import BACKEND
from .merging import METHODS, MergedLayer, merge_layer, merge_model
from .moe import (
    ExpertWeights,
    MoeLayer,
    MoeModel,
    Router,
    UsageStats,
    collect_usage,
    expert_forward,
    layer_forward,
    model_forward,
    router_gates,
)
from .synthetic import GenConfig, generate_model, generate_tokens

__version__ = "0.1.0"
