import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imm.data import ToyDataset, mode_centers, mode_radius, sample_dataset
from imm.evaluation import (
    EvalError,
    EvalReport,
    mmd2_baseline,
    mode_coverage,
    permutation_test,
    sliced_w1,
    two_sample_mmd,
)


def ring(n, rng):
    return sample_dataset(ToyDataset(), n, rng)[0]


def test_same_distribution_within_permutation_null():
    rng = np.random.default_rng(0)
    pts = ring(4000, rng)
    res = permutation_test(pts[:2000], pts[2000:], 50, rng)
    assert abs(res.statistic) < 3 * res.null_std
    assert res.statistic == pytest.approx(two_sample_mmd(pts[:2000], pts[2000:]), rel=1e-10)


def test_shifted_sample_saturates():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((500, 2))
    bw = 1.0
    assert two_sample_mmd(X, X + 10 * bw * 50, bandwidth=bw) > 0.5


def test_identical_sets_near_zero():
    X = np.random.default_rng(2).standard_normal((300, 2))
    n = len(X)
    v = two_sample_mmd(X, X)
    # removing the diagonal from both within-sample terms but not the cross term
    # gives exactly -2 (1 - mean off-diagonal k) / n, which is at most 2/n in size
    assert -2.0 / n <= v <= 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_mmd_symmetric_and_order_invariant(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((40, 2)), rng.standard_normal((30, 2)) + 0.3
    a = two_sample_mmd(X, Y)
    assert a == pytest.approx(two_sample_mmd(Y, X), abs=1e-12)
    assert a == pytest.approx(two_sample_mmd(X[rng.permutation(40)], Y[rng.permutation(30)]), abs=1e-12)


def test_permutation_null_calibration():
    rng = np.random.default_rng(3)
    inside = 0
    trials = 200
    for _ in range(trials):
        X, Y = rng.standard_normal((40, 2)), rng.standard_normal((40, 2))
        res = permutation_test(X, Y, 200, rng)
        lo, hi = np.quantile(res.null, [0.005, 0.995])
        inside += lo <= res.statistic <= hi
    assert inside / trials >= 0.95


def test_sliced_w1():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((50, 2))
    assert sliced_w1(X, X, 8, rng) == 0.0
    assert sliced_w1(np.array([0.0]), np.array([1.0]), 3, rng) == pytest.approx(1.0)
    with pytest.raises(EvalError):
        sliced_w1(X, X, 0, rng)
    with pytest.raises(EvalError):
        sliced_w1(np.zeros((0, 2)), X, 1, rng)


def test_mode_coverage_on_ground_truth():
    ds = ToyDataset()
    counts = mode_coverage(ring(10_000, np.random.default_rng(5)), mode_centers(ds), mode_radius(ds))
    assert counts.sum() == 10_000
    assert np.all(counts[:8] >= 500)
    assert counts[8] < 10
    far = mode_coverage(np.array([[10.0, 10.0]]), mode_centers(ds), mode_radius(ds))
    assert far[-1] == 1 and far[:8].sum() == 0
    with pytest.raises(EvalError):
        mode_coverage(np.zeros((1, 2)), np.zeros((0, 2)), 1.0)


def test_baseline_and_noise_separation():
    rng = np.random.default_rng(6)
    base = mmd2_baseline(ring, 1000, rng)
    noise = 0.5 * rng.standard_normal((1000, 2))
    assert base > 0
    ref = ring(1000, rng)
    assert two_sample_mmd(noise, ref) > 5 * base
    assert permutation_test(noise, ref, 100, rng).p_value < 0.02


def test_report_round_trip():
    rep = EvalReport(1.5e-4, 3e-4, 0.02, np.array([10, 11, 0]), 2000, 2000)
    back = EvalReport.from_text(rep.to_text())
    assert back.mmd2 == rep.mmd2 and back.sliced_w1 == rep.sliced_w1
    np.testing.assert_array_equal(back.mode_counts, rep.mode_counts)
    rep2 = EvalReport(1.0, 2.0, 3.0, None, 5, 6)
    assert EvalReport.from_text(rep2.to_text()).mode_counts is None


def test_too_few_points():
    with pytest.raises(EvalError):
        two_sample_mmd(np.zeros((1, 2)), np.zeros((5, 2)))
