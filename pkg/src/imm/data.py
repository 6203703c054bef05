"""Toy 2-D datasets, rescaled so each coordinate has std close to 0.5."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

GAUSS_RING8 = "gauss_ring8"
CHECKERBOARD = "checkerboard"
TWO_MOONS = "two_moons"
NAMES = (GAUSS_RING8, CHECKERBOARD, TWO_MOONS)

RING_RADIUS = 1.0
RING_STD = RING_RADIUS / 20.0
MOON_NOISE = 0.05


class DataError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class ToyDataset:
    name: str = GAUSS_RING8
    sigma_d: float = 0.5

    def __post_init__(self):
        if self.name not in NAMES:
            raise DataError(f"unknown dataset {self.name!r}")

    @property
    def n_classes(self) -> int:
        return 8 if self.name == GAUSS_RING8 else 1

    @property
    def scale(self) -> np.ndarray:
        """Per-dimension factor applied after centering."""
        return self.sigma_d / raw_std(self.name)

    @property
    def offset(self) -> np.ndarray:
        return raw_mean(self.name)


def raw_mean(name: str) -> np.ndarray:
    if name == TWO_MOONS:
        # E[cos]=0, E[sin]=2/pi on both arcs, mixed 50/50
        return np.array([0.5, 0.25])
    return np.zeros(2)


def raw_std(name: str) -> np.ndarray:
    """Closed-form per-dimension std of the unscaled generator."""
    if name == GAUSS_RING8:
        # E[cos^2] = 1/2 over 8 equally spaced angles, plus component variance
        return np.full(2, math.sqrt(0.5 * RING_RADIUS**2 + RING_STD**2))
    if name == CHECKERBOARD:
        # uniform over half of [-2, 2]^2 with uniform marginals: var = 16/12
        return np.full(2, math.sqrt(4.0 / 3.0))
    # two moons: arcs mixed 50/50, theta ~ U[0, pi]
    # outer x = cos(th), inner x = 1 - cos(th): mixture mean 0.5, E[x^2] = 1
    var_x = 1.0 - 0.25 + MOON_NOISE**2
    return np.sqrt(np.array([var_x, _moon_var_y()]))


def _moon_var_y() -> float:
    # outer y = sin(th); inner y = 0.5 - sin(th)
    # E[sin] = 2/pi, E[sin^2] = 1/2
    e_outer, e2_outer = 2.0 / math.pi, 0.5
    e_inner = 0.5 - 2.0 / math.pi
    e2_inner = 0.25 - 2.0 / math.pi + 0.5
    mean = 0.5 * (e_outer + e_inner)
    return 0.5 * (e2_outer + e2_inner) - mean**2 + MOON_NOISE**2


def mode_centers(ds: ToyDataset) -> np.ndarray:
    """Rescaled GaussRing8 mode means (8th roots of unity times the radius)."""
    if ds.name != GAUSS_RING8:
        raise DataError("mode centers are only defined for gauss_ring8")
    ang = 2.0 * math.pi * np.arange(8) / 8
    raw = RING_RADIUS * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return (raw - ds.offset) * ds.scale


def mode_radius(ds: ToyDataset) -> float:
    """Assignment radius for mode coverage: five component stds."""
    if ds.name != GAUSS_RING8:
        raise DataError("mode radius is only defined for gauss_ring8")
    return float(5.0 * RING_STD * ds.scale[0])


def _raw_sample(name, n, rng):
    if name == GAUSS_RING8:
        labels = rng.integers(0, 8, n)
        ang = 2.0 * math.pi * labels / 8
        centers = RING_RADIUS * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return centers + RING_STD * rng.standard_normal((n, 2)), labels
    if name == CHECKERBOARD:
        # pick a cell among the 8 dark cells of the 4x4 board, then a point in it
        cell = rng.integers(0, 8, n)
        row = cell // 2
        col = 2 * (cell % 2) + (row % 2)
        u = rng.random((n, 2))
        pts = np.stack([col + u[:, 0], row + u[:, 1]], axis=1) - 2.0
        return pts, np.zeros(n, dtype=np.int64)
    th = math.pi * rng.random(n)
    inner = rng.random(n) < 0.5
    x = np.where(inner, 1.0 - np.cos(th), np.cos(th))
    y = np.where(inner, 0.5 - np.sin(th), np.sin(th))
    pts = np.stack([x, y], axis=1) + MOON_NOISE * rng.standard_normal((n, 2))
    return pts, np.zeros(n, dtype=np.int64)


def sample_dataset(ds: ToyDataset, n: int, rng: np.random.Generator):
    """Return ``(points (n, 2), labels (n,))``."""
    if n < 0:
        raise DataError("n must be nonnegative")
    pts, labels = _raw_sample(ds.name, n, rng)
    return (pts - ds.offset) * ds.scale, labels.astype(np.int64)
