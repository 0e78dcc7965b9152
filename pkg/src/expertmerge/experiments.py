"""End-to-end evaluation, compression / sample-size sweeps and merge timing."""

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clustering import assign_clusters
from .errors import ContractViolation
from .merging import METHODS, MergedLayer, merge_layer, merge_model
from .moe import collect_usage, model_forward
from .synthetic import generate_model, generate_tokens

CSV_COLUMNS = ("axis_value", "seed", "method", "per_layer_errors", "end_to_end_error", "wall_time_ms")

# token streams derived from a trial seed; merge and eval never share one
MERGE_STREAM = 1
EVAL_STREAM = 2


@dataclass
class ErrorReport:
    per_layer_rel_error: list
    end_to_end_rel_error: float
    method: str
    config_echo: dict = field(default_factory=dict)
    wall_time_ms: float = 0.0

    def csv_row(self, axis_value="", seed=""):
        return {
            "axis_value": axis_value,
            "seed": seed,
            "method": self.method,
            "per_layer_errors": ";".join(repr(float(e)) for e in self.per_layer_rel_error),
            "end_to_end_error": repr(float(self.end_to_end_rel_error)),
            "wall_time_ms": f"{self.wall_time_ms:.3f}",
        }


def _rel(a, b):
    denom = np.linalg.norm(b)
    diff = np.linalg.norm(a - b)
    if denom == 0:
        return 0.0 if diff == 0 else float("inf")
    return float(diff / denom)


def _method_tag(model):
    tags = sorted({layer.method_tag for layer in model.layers if isinstance(layer, MergedLayer)})
    return "+".join(tags) if tags else "original"


def evaluate(original, merged, x_eval, config_echo=None, wall_time_ms=0.0):
    """Relative Frobenius errors of every layer's output and of the final state."""
    if original.d_model != merged.d_model or len(original.layers) != len(merged.layers):
        raise ContractViolation("models are not comparable (d_model or depth differ)")
    hs_o = model_forward(original, x_eval)
    hs_m = model_forward(merged, x_eval)
    per_layer = [
        _rel(hs_m[t + 1] - hs_m[t], hs_o[t + 1] - hs_o[t]) for t in range(len(original.layers))
    ]
    return ErrorReport(
        per_layer,
        _rel(hs_m[-1], hs_o[-1]),
        _method_tag(merged),
        dict(config_echo or {}),
        wall_time_ms,
    )


def token_seed(seed, stream):
    return (int(seed), stream)


def run_trial(cfg, method, experts, layers, n_tokens, n_eval=512, seed=None, **merge_kw):
    """Generate, merge and evaluate one seeded configuration."""
    seed = cfg.seed if seed is None else seed
    cfg = cfg.replace(seed=seed)
    model = generate_model(cfg)
    x_merge = generate_tokens(cfg.d_model, n_tokens, token_seed(seed, MERGE_STREAM))
    x_eval = generate_tokens(cfg.d_model, n_eval, token_seed(seed, EVAL_STREAM))
    start = time.perf_counter()
    merged = merge_model(model, layers, experts, x_merge, method, **merge_kw)
    elapsed = (time.perf_counter() - start) * 1e3
    echo = {
        "config": cfg.to_dict(),
        "experts": experts,
        "layers": list(layers),
        "tokens": n_tokens,
        "eval_tokens": n_eval,
        **merge_kw,
    }
    return evaluate(model, merged, x_eval, echo, elapsed)


def last_layers(n_layers, count):
    return list(range(n_layers - count, n_layers))


def _fan_out(jobs, workers):
    if workers <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda job: job(), jobs))


def sweep_compression(axis, grid, base_cfg, seeds, method="mergemoe", n_tokens=256,
                      n_eval=512, fixed_layers=None, fixed_experts=None, workers=1):
    """Vary merged experts per layer (``experts``) or the number of merged layers (``layers``).

    Merged layers are always the last ones of the stack. Rows are ordered by
    grid index, then seed.
    """
    grid = list(grid)
    if not grid:
        raise ContractViolation("grid must be non-empty")
    if axis == "experts":
        n_fixed = base_cfg.n_layers if fixed_layers is None else fixed_layers

        def spec(v):
            return v, last_layers(base_cfg.n_layers, n_fixed)
    elif axis == "layers":
        m_fixed = base_cfg.n_experts // 2 if fixed_experts is None else fixed_experts

        def spec(v):
            return m_fixed, last_layers(base_cfg.n_layers, v)
    else:
        raise ContractViolation(f"unknown axis {axis!r}")
    jobs, keys = [], []
    for v in grid:
        m, layers = spec(v)
        for s in range(seeds):
            jobs.append(lambda m=m, layers=layers, s=s: run_trial(
                base_cfg, method, m, layers, n_tokens, n_eval, seed=base_cfg.seed + s))
            keys.append((v, base_cfg.seed + s))
    reports = _fan_out(jobs, workers)
    return [r.csv_row(v, s) for (v, s), r in zip(keys, reports)]


def sweep_samples(token_grid, cfg, seeds, method="mergemoe", experts=None, layers=None,
                  n_eval=512, workers=1):
    token_grid = list(token_grid)
    if not token_grid:
        raise ContractViolation("grid must be non-empty")
    experts = cfg.n_experts // 2 if experts is None else experts
    layers = list(range(cfg.n_layers)) if layers is None else list(layers)
    jobs, keys = [], []
    for t in token_grid:
        for s in range(seeds):
            jobs.append(lambda t=t, s=s: run_trial(
                cfg, method, experts, layers, t, n_eval, seed=cfg.seed + s))
            keys.append((t, cfg.seed + s))
    reports = _fan_out(jobs, workers)
    return [r.csv_row(t, s) for (t, s), r in zip(keys, reports)]


def median_by_axis(rows, column="end_to_end_error"):
    """``{axis_value: median}`` preserving first-seen axis order."""
    groups = {}
    for row in rows:
        groups.setdefault(row["axis_value"], []).append(float(row[column]))
    return {k: float(np.median(v)) for k, v in groups.items()}


def time_merge(cfg, method, repeats, experts=None, n_tokens=256):
    """Wall-clock time of merging each layer, ``repeats`` times."""
    if repeats < 1:
        raise ContractViolation("repeats must be >= 1")
    if method not in METHODS:
        raise ContractViolation(f"unknown method {method!r}")
    experts = cfg.n_experts // 2 if experts is None else experts
    model = generate_model(cfg)
    x = generate_tokens(cfg.d_model, n_tokens, token_seed(cfg.seed, MERGE_STREAM))
    hs = model_forward(model, x)
    rows = []
    for r in range(repeats):
        for idx, layer in enumerate(model.layers):
            start = time.perf_counter()
            plan = assign_clusters(layer, collect_usage(layer, hs[idx]), experts)
            merge_layer(layer, plan, hs[idx], method)
            rows.append({
                "method": method,
                "repeat": r,
                "layer": idx,
                "wall_time_ms": (time.perf_counter() - start) * 1e3,
            })
    return rows


def write_csv(rows, path, columns=CSV_COLUMNS):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

