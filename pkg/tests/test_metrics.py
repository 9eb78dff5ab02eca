"""Metric correctness against independent scalar-loop oracles and the
degenerate-input contracts."""

import math

import numpy as np
import pytest

from camaudit import metrics
from camaudit.metrics import (
    ConstantMapError,
    DegenerateMapError,
    cc,
    kld,
    metric_triple,
    sim,
    to_prob,
    uniform_like,
)


# --- scalar oracles: plain double loops, no numpy vector ops -----------------


def oracle_sim(gt, cam):
    total = 0.0
    for i in range(len(gt)):
        for j in range(len(gt[0])):
            total += min(gt[i][j], cam[i][j])
    return total


def oracle_kld(gt, cam, epsilon, weighting="cam"):
    total = 0.0
    for i in range(len(gt)):
        for j in range(len(gt[0])):
            if weighting == "cam":
                outer, inner = cam[i][j], gt[i][j]
            else:
                outer, inner = gt[i][j], cam[i][j]
            total += outer * math.log(epsilon + outer / (epsilon + inner))
    return total


def oracle_cc(a, b):
    n = len(a) * len(a[0])
    flat_a = [v for row in a for v in row]
    flat_b = [v for row in b for v in row]
    mean_a = sum(flat_a) / n
    mean_b = sum(flat_b) / n
    cov = va = vb = 0.0
    for x, y in zip(flat_a, flat_b):
        cov += (x - mean_a) * (y - mean_b)
        va += (x - mean_a) ** 2
        vb += (y - mean_b) ** 2
    return cov / math.sqrt(va * vb)


def random_prob_pair(rng, shape=(8, 8)):
    gt = rng.random(shape)
    cam = rng.random(shape)
    return gt / gt.sum(), cam / cam.sum()


def test_sim_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(202)
    for _ in range(25):
        gt, cam = random_prob_pair(rng)
        assert sim(gt, cam) == pytest.approx(oracle_sim(gt.tolist(), cam.tolist()), abs=1e-12)


def test_kld_matches_oracle_on_random_pairs_both_weightings():
    rng = np.random.default_rng(303)
    for _ in range(25):
        gt, cam = random_prob_pair(rng)
        for weighting in metrics.KLD_WEIGHTINGS:
            expected = oracle_kld(gt.tolist(), cam.tolist(), 1e-7, weighting)
            assert kld(gt, cam, epsilon=1e-7, weighting=weighting) == pytest.approx(
                expected, abs=1e-12
            )


def test_cc_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(404)
    for _ in range(25):
        a = rng.random((8, 8))
        b = rng.random((8, 8))
        assert cc(a, b) == pytest.approx(oracle_cc(a.tolist(), b.tolist()), abs=1e-12)


# --- frozen literals, computed once with the scalar oracles ------------------


def test_sim_frozen_example():
    gt = [[0.1, 0.2], [0.3, 0.4]]
    cam = [[0.4, 0.3], [0.2, 0.1]]
    assert sim(gt, cam) == pytest.approx(0.6, abs=1e-12)


def test_kld_frozen_example():
    gt = [[0.1, 0.2], [0.3, 0.4]]
    cam = [[0.4, 0.3], [0.2, 0.1]]
    assert kld(gt, cam, epsilon=1e-7) == pytest.approx(0.45643427748039767, abs=1e-12)


def test_kld_weighting_switch_frozen_example():
    gt = [[0.7, 0.1], [0.1, 0.1]]
    cam = [[0.25, 0.25], [0.25, 0.25]]
    assert kld(gt, cam, epsilon=1e-7, weighting="cam") == pytest.approx(
        0.4298125088964482, abs=1e-12
    )
    assert kld(gt, cam, epsilon=1e-7, weighting="gt") == pytest.approx(
        0.44584607246467417, abs=1e-12
    )


def test_cc_perfect_and_inverted():
    a = [[1.0, 2.0], [3.0, 4.0]]
    inverted = [[4.0, 3.0], [2.0, 1.0]]
    assert cc(a, a) == pytest.approx(1.0, abs=1e-12)
    assert cc(a, inverted) == pytest.approx(-1.0, abs=1e-12)


def test_cc_scale_invariance():
    rng = np.random.default_rng(17)
    a = rng.random((6, 6))
    assert cc(a, 3.5 * a + 2.0) == pytest.approx(1.0, abs=1e-12)


# --- contracts ----------------------------------------------------------------


def test_sim_identical_maps_is_one():
    rng = np.random.default_rng(5)
    gt, _ = random_prob_pair(rng)
    assert sim(gt, gt) == pytest.approx(1.0, abs=1e-12)


def test_sim_rejects_unnormalized_input():
    with pytest.raises(ValueError):
        sim([[0.5, 0.5], [0.5, 0.5]], [[0.25, 0.25], [0.25, 0.25]])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        sim(np.full((2, 2), 0.25), np.full((2, 3), 1 / 6))


def test_kld_identical_maps_near_zero():
    rng = np.random.default_rng(6)
    gt, _ = random_prob_pair(rng)
    n = gt.size
    assert abs(kld(gt, gt, epsilon=1e-7)) <= 2 * 1e-7 * n


def test_kld_rejects_bad_epsilon_and_weighting():
    gt = np.full((2, 2), 0.25)
    with pytest.raises(ValueError):
        kld(gt, gt, epsilon=0.0)
    with pytest.raises(ValueError):
        kld(gt, gt, weighting="both")


def test_to_prob_normalizes_and_rejects_zero():
    arr = to_prob([[1.0, 3.0], [0.0, 0.0]])
    assert arr.sum() == pytest.approx(1.0, abs=1e-12)
    assert arr[0, 1] == pytest.approx(0.75, abs=1e-12)
    with pytest.raises(DegenerateMapError):
        to_prob(np.zeros((4, 4)))


def test_cc_constant_map_raises():
    with pytest.raises(ConstantMapError):
        cc(np.full((3, 3), 0.5), np.arange(9, dtype=float).reshape(3, 3))


def test_metric_triple_on_regular_pair_matches_components():
    rng = np.random.default_rng(99)
    gt = rng.random((8, 8))
    cam = rng.random((8, 8))
    triple = metric_triple(gt, cam, epsilon=1e-7)
    assert triple.sim == pytest.approx(sim(to_prob(gt), to_prob(cam)), abs=1e-12)
    assert triple.kld == pytest.approx(kld(to_prob(gt), to_prob(cam), epsilon=1e-7), abs=1e-12)
    assert triple.cc == pytest.approx(cc(gt, cam), abs=1e-12)
    assert triple.degenerate is False


def test_metric_triple_zero_map_uses_uniform_and_flags_degenerate():
    rng = np.random.default_rng(100)
    gt = rng.random((8, 8))
    zero = np.zeros((8, 8))
    triple = metric_triple(gt, zero)
    expected_sim = sim(to_prob(gt), uniform_like(gt))
    assert triple.sim == pytest.approx(expected_sim, abs=1e-12)
    assert triple.cc is None
    assert triple.degenerate is True


def test_metric_triple_constant_nonzero_map_has_no_cc():
    rng = np.random.default_rng(101)
    gt = rng.random((8, 8))
    flat = np.full((8, 8), 0.5)
    triple = metric_triple(gt, flat)
    assert triple.cc is None
    assert triple.degenerate is True
    assert math.isfinite(triple.sim) and math.isfinite(triple.kld)
