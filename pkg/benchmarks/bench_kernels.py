"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 20] [--csv out.csv]
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from expertmerge import GenConfig, generate_model, generate_tokens, kernels, merge_model, model_forward
from expertmerge import _fallback

try:
    from expertmerge import _core
except ImportError:
    _core = None


def kernel_cases(rng, n_experts, tokens, d_ff):
    logits = rng.standard_normal((n_experts, tokens))
    g = rng.standard_normal((d_ff, tokens))
    u = rng.standard_normal((d_ff, tokens))
    gates, _ = kernels.route(logits, 2, impl=_fallback)
    refs = np.arange(n_experts) % max(1, n_experts // 2)
    m = int(refs.max()) + 1
    return {
        "route": lambda impl: kernels.route(logits, 2, impl=impl),
        "gated_hidden": lambda impl: kernels.gated_hidden(g, u, "silu", impl=impl),
        "cluster_gates": lambda impl: kernels.cluster_gates(gates, refs, m, impl=impl),
    }


def end_to_end(impl):
    # swap the module-level backend for a whole forward + merge
    cfg = GenConfig(seed=0)
    model = generate_model(cfg)
    x = generate_tokens(cfg.d_model, 512, 0)

    def run():
        saved = kernels._impl
        kernels._impl = impl
        try:
            model_forward(merge_model(model, [0, 1, 2], 4, x), x)
        finally:
            kernels._impl = saved
    return run


def best_ms(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats)) * 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    rows = []
    for n_experts, tokens, d_ff in [(8, 256, 16), (64, 4096, 64), (8, 65536, 16)]:
        for name, case in kernel_cases(rng, n_experts, tokens, d_ff).items():
            c = best_ms(lambda: case(_core), args.repeats)
            p = best_ms(lambda: case(_fallback), args.repeats)
            rows.append({"case": name, "shape": f"N={n_experts} T={tokens} d_ff={d_ff}",
                         "compiled_ms": c, "python_ms": p, "speedup": p / c})
    c = best_ms(end_to_end(_core), max(3, args.repeats // 4))
    p = best_ms(end_to_end(_fallback), max(3, args.repeats // 4))
    rows.append({"case": "merge+forward", "shape": "default config, 3 layers, T=512",
                 "compiled_ms": c, "python_ms": p, "speedup": p / c})

    print(f"{'case':<15}{'shape':<34}{'compiled ms':>12}{'python ms':>12}{'speedup':>9}")
    for r in rows:
        print(f"{r['case']:<15}{r['shape']:<34}{r['compiled_ms']:>12.3f}{r['python_ms']:>12.3f}{r['speedup']:>8.2f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
