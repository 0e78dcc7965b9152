import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expertmerge.errors import ContractViolation
from expertmerge.theory import (
    TheoremInstance,
    central_difference,
    f_i,
    gradient_f_i,
    objective,
    oracle_minimize,
    optimal_b,
    quasi_frobenius,
    random_feasible_b,
    random_instance,
    verify_theorem,
)


def test_two_experts_one_cluster_hand_expansion():
    y0 = np.array([[1.0, 0.5], [0.0, 2.0], [3.0, -1.0]])
    f = np.array([2.0, 3.0])
    inst = TheoremInstance(y0, f, [0, 0])
    a, b = 0.7, -0.2
    v = a * y0[:, 0] + b * y0[:, 1]
    expected = f[0] * np.sum((v - y0[:, 0]) ** 2) + f[1] * np.sum((v - y0[:, 1]) ** 2)
    assert objective(inst, [[a], [b]]).value == pytest.approx(expected, rel=1e-14)
    np.testing.assert_allclose(optimal_b(inst)[:, 0], [0.4, 0.6])


def test_identity_gram_minimiser_is_frequency_ratio():
    inst = TheoremInstance(np.eye(3), np.array([1.0, 2.0, 5.0]), [0, 0, 1])
    np.testing.assert_allclose(oracle_minimize(inst), [[1 / 3, 0], [2 / 3, 0], [0, 1]], atol=1e-14)
    np.testing.assert_allclose(optimal_b(inst), oracle_minimize(inst), atol=1e-14)


def test_singletons_cost_nothing():
    rng = np.random.default_rng(0)
    inst = random_instance(rng, 4, 4)
    assert objective(inst, optimal_b(inst)).value == pytest.approx(0.0, abs=1e-14)


def test_support_violation_is_named():
    inst = TheoremInstance(np.eye(3), np.ones(3), [0, 0, 1])
    b = optimal_b(inst)
    b[2, 0] = 0.1
    with pytest.raises(ContractViolation, match=r"B\[2, 0\]"):
        objective(inst, b)
    with pytest.raises(ContractViolation):
        objective(inst, np.zeros((3, 3)))


def test_instance_validation():
    with pytest.raises(ContractViolation):
        TheoremInstance(np.eye(2), np.array([1.0, 0.0]), [0, 0])
    with pytest.raises(ContractViolation):
        TheoremInstance(np.eye(3), np.ones(3), [0, 2, 2])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        inst = random_instance(rng, n, int(rng.integers(1, min(3, n) + 1)))
        c = int(rng.integers(inst.m))
        a = rng.standard_normal(inst.cluster(c).size)
        g = gradient_f_i(inst, c, a)
        fd = central_difference(lambda z: f_i(inst, c, z), a)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-300))
    assert worst <= 1e-6


def test_full_length_coefficients():
    inst = TheoremInstance(np.eye(3), np.ones(3), [0, 1, 0])
    full = np.array([0.2, 0.0, 0.8])
    assert gradient_f_i(inst, 0, full).shape == (3,)
    assert f_i(inst, 0, full) == f_i(inst, 0, full[[0, 2]])
    with pytest.raises(ContractViolation):
        f_i(inst, 0, np.array([0.2, 0.1, 0.8]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_frequency_scaling_invariance(n, seed, scale):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n, int(rng.integers(1, min(3, n) + 1)))
    scaled = TheoremInstance(inst.y0, scale * inst.f, inst.assignment)
    np.testing.assert_allclose(optimal_b(scaled), optimal_b(inst), rtol=1e-12)
    assert objective(scaled, optimal_b(scaled)).value == pytest.approx(
        scale * objective(inst, optimal_b(inst)).value, rel=1e-9, abs=1e-12
    )


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_optimum_dominates_perturbations(n, seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n, int(rng.integers(1, min(3, n) + 1)))
    b = optimal_b(inst)
    base = objective(inst, b).value
    assert base >= -1e-12
    for _ in range(10):
        assert objective(inst, b + 1e-3 * random_feasible_b(inst, rng)).value >= base - 1e-10 * (1 + base)
    for c in range(inst.m):
        assert np.linalg.norm(gradient_f_i(inst, c, b[inst.cluster(c), c])) <= 1e-10


def test_quasi_frobenius():
    np.testing.assert_allclose(quasi_frobenius([np.ones((2, 2)), np.array([[3.0, 4.0], [0, 0]])]), [4.0, 25.0])
    with pytest.raises(ContractViolation):
        quasi_frobenius([np.ones(2), np.ones(3)])


def test_verify_report():
    report = verify_theorem(20, seed=4)
    d = report.to_dict()
    assert {"trials", "passes", "worst_stationarity_gap", "worst_value_gap", "failed_instances"} <= d.keys()
    assert report.passes == 20 and report.failed_instances == []
    assert verify_theorem(5, seed=4).to_dict() == verify_theorem(5, seed=4).to_dict()
    with pytest.raises(ContractViolation):
        verify_theorem(0)


def test_perturbed_weights_cost_more():
    rng = np.random.default_rng(21)
    worse = 0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        inst = random_instance(rng, n, int(rng.integers(1, min(3, n) + 1)))
        b = optimal_b(inst)
        base = objective(inst, b).value
        j = int(rng.integers(n))
        b[j, inst.assignment[j]] += 0.1
        worse += objective(inst, b).value > base
    assert worse >= 99


def test_splitting_clusters_never_hurts():
    import itertools

    rng = np.random.default_rng(22)
    for _ in range(40):
        n = int(rng.integers(2, 6))
        inst = random_instance(rng, n, int(rng.integers(1, min(3, n) + 1)))
        coarse = objective(inst, oracle_minimize(inst)).value
        for idx in inst.clusters:
            for r in range(1, idx.size):
                for sub in itertools.combinations(idx, r):
                    a = inst.assignment.copy()
                    a[list(sub)] = inst.m
                    fine = TheoremInstance(inst.y0, inst.f, a)
                    assert objective(fine, oracle_minimize(fine)).value <= coarse + 1e-9 * (1 + coarse)
