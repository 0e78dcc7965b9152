"""JSON checkpoints for original and merged models.

Floats are written with Python's shortest round-trip repr, so
save -> load -> save is byte-identical and weights round-trip bit-exactly.
"""

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ContractViolation, SchemaVersionError
from .merging import MergedLayer
from .moe import ExpertWeights, MoeLayer, MoeModel, Router

SCHEMA_VERSION = 1


def _expert_to_dict(e):
    if e is None:
        return None
    return {"w_gate": e.w_gate.tolist(), "w_up": e.w_up.tolist(), "w_down": e.w_down.tolist()}


def _layer_to_dict(layer):
    merged = isinstance(layer, MergedLayer)
    return {
        "w_r": layer.router.w_r.tolist(),
        "top_k": layer.router.top_k,
        "renormalize": layer.router.renormalize,
        "activation": layer.activation,
        "experts": [_expert_to_dict(e) for e in layer.experts],
        "shared_expert": _expert_to_dict(layer.shared_expert),
        "expert_refs": layer.expert_refs.tolist() if merged else None,
        "method_tag": layer.method_tag if merged else None,
    }


def model_to_dict(model):
    return {
        "schema_version": SCHEMA_VERSION,
        "d_model": model.d_model,
        "layers": [_layer_to_dict(layer) for layer in model.layers],
    }


def dumps(model):
    return json.dumps(model_to_dict(model), separators=(",", ":"), allow_nan=False) + "\n"


def save_model(model, path):
    Path(path).write_text(dumps(model))


def _get(obj, key, where, kind=None):
    if not isinstance(obj, dict):
        raise CheckpointError(f"{where}: expected an object")
    if key not in obj:
        raise CheckpointError(f"{where}: missing key {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise CheckpointError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}")
    return value


def _matrix(obj, key, where):
    value = _get(obj, key, where, list)
    loc = f"{where}.{key}"
    if not value or not all(isinstance(r, list) for r in value):
        raise CheckpointError(f"{loc}: expected a non-empty list of rows")
    width = len(value[0])
    for i, row in enumerate(value):
        if len(row) != width:
            raise CheckpointError(f"{loc}[{i}]: ragged row ({len(row)} != {width})")
        for j, x in enumerate(row):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise CheckpointError(f"{loc}[{i}][{j}]: expected a number")
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise CheckpointError(f"{loc}: non-finite entry")
    return arr


def _expert(obj, where):
    if obj is None:
        return None
    g, u, d = (_matrix(obj, k, where) for k in ("w_gate", "w_up", "w_down"))
    if g.shape != u.shape or d.shape != (g.shape[1], g.shape[0]):
        raise ContractViolation(
            f"{where}: inconsistent expert shapes {g.shape}, {u.shape}, {d.shape}"
        )
    return ExpertWeights(g, u, d)


def _layer(obj, where, d_model):
    w_r = _matrix(obj, "w_r", where)
    top_k = _get(obj, "top_k", where, int)
    n = w_r.shape[0]
    if not 1 <= top_k <= n:
        raise ContractViolation(f"{where}: top_k={top_k} violates 1 <= top_k <= n_experts={n}")
    if w_r.shape[1] != d_model:
        raise ContractViolation(f"{where}.w_r: {w_r.shape[1]} columns, d_model is {d_model}")
    renorm = obj.get("renormalize", False)
    activation = obj.get("activation", "silu")
    experts_raw = _get(obj, "experts", where, list)
    experts = [_expert(e, f"{where}.experts[{i}]") for i, e in enumerate(experts_raw)]
    if any(e is None for e in experts):
        raise CheckpointError(f"{where}.experts: null expert")
    shared = _expert(obj.get("shared_expert"), f"{where}.shared_expert")
    router = Router(w_r, top_k, bool(renorm))
    refs = obj.get("expert_refs")
    if refs is None:
        return MoeLayer(router, experts, shared, activation)
    if not isinstance(refs, list) or not all(isinstance(r, int) and not isinstance(r, bool) for r in refs):
        raise CheckpointError(f"{where}.expert_refs: expected a list of integers")
    tag = obj.get("method_tag")
    if not isinstance(tag, str):
        raise CheckpointError(f"{where}.method_tag: merged layers need a string tag")
    return MergedLayer(router, refs, experts, tag, shared, activation)


def model_from_dict(data):
    if not isinstance(data, dict):
        raise CheckpointError("checkpoint root must be an object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported schema_version {version!r}; this build reads {SCHEMA_VERSION}"
        )
    d_model = _get(data, "d_model", "$", int)
    layers = _get(data, "layers", "$", list)
    return MoeModel(d_model, tuple(_layer(l, f"$.layers[{i}]", d_model) for i, l in enumerate(layers)))


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return model_from_dict(data)


def load_model(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return loads(text)
