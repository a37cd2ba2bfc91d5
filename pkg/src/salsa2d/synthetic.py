"""Synthetic point patterns for tests and benchmarks.

The canonical benchmark is a unit-square process with two sharp intensity
bumps over a low background: localized structure that a fixed smooth
surface underfits but adaptive knot placement can track.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointSet, Polygon
from .ppm import assemble_dataset, generate_pseudo_absences

UNIT_SQUARE = Polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])

_BUMPS = (
    # (center_x, center_y, height, width)
    (0.25, 0.30, 1.0, 0.030),
    (0.70, 0.72, 0.8, 0.050),
)


def two_bump_intensity(coords, base_rate=100.0, bump_rate=20000.0):
    """Intensity surface (points per unit area) with two localized bumps."""
    coords = np.asarray(coords, dtype=np.float64)
    lam = np.full(len(coords), base_rate)
    for cx, cy, height, width in _BUMPS:
        d2 = (coords[:, 0] - cx) ** 2 + (coords[:, 1] - cy) ** 2
        lam += bump_rate * height * np.exp(-d2 / (2.0 * width**2))
    return lam


def sample_poisson_process(intensity_fn, lam_max, rng, bounds=(0, 0, 1, 1)):
    """Thinning sampler for an inhomogeneous Poisson process."""
    xmin, ymin, xmax, ymax = bounds
    area = (xmax - xmin) * (ymax - ymin)
    n = rng.poisson(lam_max * area)
    pts = rng.uniform((xmin, ymin), (xmax, ymax), size=(n, 2))
    keep = rng.uniform(0, lam_max, size=n) < intensity_fn(pts)
    return PointSet(pts[keep])


def two_bump_presences(seed, base_rate=100.0, bump_rate=20000.0):
    """Draw one two-bump pattern (about 500 presences at the defaults)."""
    rng = np.random.default_rng(seed)
    lam_max = base_rate + bump_rate * max(b[2] for b in _BUMPS)
    return sample_poisson_process(
        lambda c: two_bump_intensity(c, base_rate, bump_rate), lam_max, rng
    )


def two_bump_dataset(seed, grid_side=40):
    """Presences plus a grid_side x grid_side pseudo-absence lattice."""
    presences = two_bump_presences(seed)
    spacing = 1.0 / (grid_side - 1)
    pseudo = generate_pseudo_absences(UNIT_SQUARE, None, spacing)
    data = assemble_dataset(presences, pseudo, UNIT_SQUARE.area(),
                            grid_spacing=spacing)
    return data, presences, pseudo


def homogeneous_presences(seed, rate=200.0):
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate)
    return PointSet(rng.uniform(0.0, 1.0, size=(n, 2)))
