import numpy as np
import pytest

from expertmerge import ExpertWeights, MoeLayer, MoeModel, Router


def make_expert(rng, d_model, d_ff, scale=1.0):
    return ExpertWeights(
        scale * rng.standard_normal((d_ff, d_model)),
        scale * rng.standard_normal((d_ff, d_model)),
        rng.standard_normal((d_model, d_ff)) / np.sqrt(d_ff * d_model),
    )


def make_layer(rng, d_model=6, d_ff=4, n=6, top_k=2, shared=False, activation="silu"):
    experts = tuple(make_expert(rng, d_model, d_ff) for _ in range(n))
    router = Router(rng.standard_normal((n, d_model)), top_k)
    se = make_expert(rng, d_model, d_ff) if shared else None
    return MoeLayer(router, experts, se, activation)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model(rng):
    return MoeModel(6, tuple(make_layer(rng) for _ in range(3)))


ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
