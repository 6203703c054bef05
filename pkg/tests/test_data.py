import numpy as np
import pytest
from scipy import stats

from imm.data import (
    CHECKERBOARD,
    GAUSS_RING8,
    NAMES,
    RING_RADIUS,
    TWO_MOONS,
    DataError,
    ToyDataset,
    mode_centers,
    mode_radius,
    raw_mean,
    raw_std,
    sample_dataset,
)


@pytest.mark.parametrize("name", NAMES)
def test_fixed_seed_identical(name):
    ds = ToyDataset(name)
    a = sample_dataset(ds, 100, np.random.default_rng(5))
    b = sample_dataset(ds, 100, np.random.default_rng(5))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@pytest.mark.parametrize("name", NAMES)
def test_rescaled_std_and_mean(name):
    pts, _ = sample_dataset(ToyDataset(name), 100_000, np.random.default_rng(0))
    std = pts.std(axis=0)
    assert np.all((0.49 <= std) & (std <= 0.51))
    assert np.all(np.abs(pts.mean(axis=0)) < 0.01)


@pytest.mark.parametrize("name", NAMES)
def test_closed_form_raw_moments(name):
    # undo the rescaling and compare against a large Monte-Carlo draw
    ds = ToyDataset(name, sigma_d=1.0)
    pts, _ = sample_dataset(ds, 1_000_000, np.random.default_rng(1))
    raw = pts / ds.scale + ds.offset
    np.testing.assert_allclose(raw.mean(axis=0), raw_mean(name), atol=5e-3)
    np.testing.assert_allclose(raw.std(axis=0), raw_std(name), rtol=5e-3)


def test_ring_labels_uniform():
    _, labels = sample_dataset(ToyDataset(GAUSS_RING8), 100_000, np.random.default_rng(2))
    counts = np.bincount(labels, minlength=8)
    assert stats.chisquare(counts).pvalue > 0.01


def test_ring_mode_means():
    ds = ToyDataset(GAUSS_RING8)
    ang = 2 * np.pi * np.arange(8) / 8
    roots = RING_RADIUS * np.stack([np.cos(ang), np.sin(ang)], 1)
    np.testing.assert_allclose(mode_centers(ds) / ds.scale, roots, atol=1e-15)
    pts, labels = sample_dataset(ds, 80_000, np.random.default_rng(3))
    for k in range(8):
        np.testing.assert_allclose(pts[labels == k].mean(0), mode_centers(ds)[k], atol=0.01)
    assert 0 < mode_radius(ds) < 0.5 * np.linalg.norm(mode_centers(ds)[0] - mode_centers(ds)[1])


def test_checkerboard_alternates():
    ds = ToyDataset(CHECKERBOARD, sigma_d=1.0)
    pts, _ = sample_dataset(ds, 10_000, np.random.default_rng(4))
    raw = pts / ds.scale
    cells = np.floor(raw + 2).astype(int)
    assert np.all((cells[:, 0] + cells[:, 1]) % 2 == cells[0].sum() % 2)


def test_errors():
    with pytest.raises(DataError):
        ToyDataset("spirals")
    with pytest.raises(DataError):
        mode_centers(ToyDataset(TWO_MOONS))
    with pytest.raises(DataError):
        sample_dataset(ToyDataset(), -1, np.random.default_rng(0))
    assert sample_dataset(ToyDataset(), 0, np.random.default_rng(0))[0].shape == (0, 2)
    assert ToyDataset().n_classes == 8 and ToyDataset(TWO_MOONS).n_classes == 1
