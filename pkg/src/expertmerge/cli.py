"""Command-line entry point: ``expertmerge <subcommand> ...``.

Exit codes: 0 success, 1 contract violation, 2 numerical failure,
3 I/O or parse error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, experiments, theory
from .errors import CheckpointError, ContractViolation, ExpertMergeError
from .merging import METHODS, merge_model
from .moe import MoeLayer, collect_usage, model_forward
from .synthetic import GenConfig, generate_model, generate_tokens

log = logging.getLogger("expertmerge")


def _read_config(path, seed=None):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    if not isinstance(data, dict):
        raise CheckpointError(f"{path}: config must be a JSON object")
    if seed is not None:
        data["seed"] = seed
    try:
        return GenConfig.from_dict(data)
    except TypeError as exc:
        raise ContractViolation(f"{path}: {exc}") from exc


def parse_layers(text, n_layers):
    """``"a..b"`` (inclusive), ``"a"`` or ``"all"``."""
    if text == "all":
        return list(range(n_layers))
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise ContractViolation(f"bad layer range {text!r}; expected a..b") from None
    if lo > hi or lo < 0 or hi >= n_layers:
        raise ContractViolation(f"layer range {text} outside 0..{n_layers - 1}")
    return list(range(lo, hi + 1))


def parse_grid(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ContractViolation(f"grid must be comma-separated integers, got {text!r}") from None


def cmd_generate(args):
    cfg = _read_config(args.config, args.seed)
    checkpoint.save_model(generate_model(cfg), args.output)
    log.info("wrote %s", args.output)


def cmd_stats(args):
    model = checkpoint.load_model(args.model)
    x = generate_tokens(model.d_model, args.tokens, args.seed)
    hs = model_forward(model, x)
    out = []
    for idx, layer in enumerate(model.layers):
        if not isinstance(layer, MoeLayer):
            out.append({"layer": idx, "merged": True, "method_tag": layer.method_tag})
            continue
        stats = collect_usage(layer, hs[idx])
        out.append({
            "layer": idx,
            "counts": stats.counts.tolist(),
            "frequencies": stats.frequencies.tolist(),
        })
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_merge(args):
    model = checkpoint.load_model(args.model)
    layers = parse_layers(args.layers, len(model.layers))
    x = generate_tokens(model.d_model, args.tokens, args.seed)
    merged = merge_model(
        model,
        layers,
        args.experts,
        x,
        args.method,
        metric=args.metric,
        singleton_shortcut=not args.no_singleton_shortcut,
        routed_tokens_only=args.routed_tokens_only,
    )
    checkpoint.save_model(merged, args.output)
    log.info("merged layers %s to %d experts with %s -> %s", layers, args.experts, args.method, args.output)


def cmd_eval(args):
    original = checkpoint.load_model(args.original)
    merged = checkpoint.load_model(args.merged)
    x = generate_tokens(original.d_model, args.tokens, args.seed)
    report = experiments.evaluate(original, merged, x)
    experiments.write_csv([report.csv_row("", args.seed)], args.report)
    print(f"end-to-end relative error: {report.end_to_end_rel_error:.6g}")


def cmd_verify(args):
    report = theory.verify_theorem(args.trials, args.seed)
    data = report.to_dict()
    Path(args.output).write_text(json.dumps(data, indent=2) + "\n")
    print(f"{report.passes}/{report.trials} instances passed")
    return 0 if report.passes == report.trials else 2


def cmd_sweep(args):
    cfg = _read_config(args.config)
    grid = parse_grid(args.grid)
    if args.axis == "samples":
        rows = experiments.sweep_samples(
            grid, cfg, args.seeds, args.method, experts=args.fixed_experts,
            n_eval=args.eval_tokens, workers=args.workers,
        )
    else:
        rows = experiments.sweep_compression(
            args.axis, grid, cfg, args.seeds, args.method, n_tokens=args.tokens,
            n_eval=args.eval_tokens, fixed_layers=args.fixed_layers,
            fixed_experts=args.fixed_experts, workers=args.workers,
        )
    experiments.write_csv(rows, args.output)
    for value, med in experiments.median_by_axis(rows).items():
        print(f"{args.axis}={value}: median end-to-end error {med:.6g}")


def cmd_time(args):
    cfg = _read_config(args.config)
    rows = experiments.time_merge(cfg, args.method, args.repeats, args.experts, args.tokens)
    writer_rows = [{**r, "wall_time_ms": f"{r['wall_time_ms']:.3f}"} for r in rows]
    if args.output:
        experiments.write_csv(writer_rows, args.output, ("method", "repeat", "layer", "wall_time_ms"))
    times = [r["wall_time_ms"] for r in rows]
    print(f"{args.method}: median per-layer merge {np.median(times):.3f} ms, max {max(times):.3f} ms")


class _Parser(argparse.ArgumentParser):
    """Usage errors are contract violations (exit 1); argparse's default is 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="expertmerge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded synthetic MoE checkpoint")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("stats", help="per-layer expert usage on a token batch")
    s.add_argument("--model", required=True)
    s.add_argument("--tokens", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_stats)

    m = sub.add_parser("merge", help="merge experts in a range of layers")
    m.add_argument("--model", required=True)
    m.add_argument("--method", choices=METHODS, default="mergemoe")
    m.add_argument("--layers", default="all", help="inclusive range a..b")
    m.add_argument("--experts", type=int, required=True)
    m.add_argument("--tokens", type=int, default=256)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--metric", choices=("cosine", "dot", "euclidean"), default="cosine")
    m.add_argument("--no-singleton-shortcut", action="store_true")
    m.add_argument("--routed-tokens-only", action="store_true")
    m.add_argument("-o", "--output", required=True)
    m.set_defaults(func=cmd_merge)

    e = sub.add_parser("eval", help="compare a merged model against its original")
    e.add_argument("--original", required=True)
    e.add_argument("--merged", required=True)
    e.add_argument("--tokens", type=int, default=512)
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify-theorem", help="check frequency-weight optimality numerically")
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("-o", "--output", required=True)
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("sweep", help="compression-ratio or sample-size sweep to CSV")
    w.add_argument("--axis", choices=("experts", "layers", "samples"), required=True)
    w.add_argument("--grid", required=True)
    w.add_argument("--config", required=True)
    w.add_argument("--seeds", type=int, default=20)
    w.add_argument("--method", choices=METHODS, default="mergemoe")
    w.add_argument("--tokens", type=int, default=256)
    w.add_argument("--eval-tokens", type=int, default=512)
    w.add_argument("--fixed-layers", type=int)
    w.add_argument("--fixed-experts", type=int)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("-o", "--output", required=True)
    w.set_defaults(func=cmd_sweep)

    t = sub.add_parser("time", help="time per-layer merges")
    t.add_argument("--config", required=True)
    t.add_argument("--method", choices=METHODS, default="mergemoe")
    t.add_argument("--repeats", type=int, default=5)
    t.add_argument("--experts", type=int)
    t.add_argument("--tokens", type=int, default=256)
    t.add_argument("-o", "--output")
    t.set_defaults(func=cmd_time)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except ExpertMergeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
