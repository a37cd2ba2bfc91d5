"""Basis evaluation and design-matrix assembly.

Two radial basis kinds are supported for the 2-D spatial term. With
distance h (km) and range parameter r > 0:

    exponential:  exp(-h / r^2)      larger r -> more global influence
    gaussian:     exp(-(h * r)^2)    larger r -> more local influence

One-dimensional covariate smooths use clamped B-splines of configurable
degree (default quadratic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EXPONENTIAL = "exponential"
GAUSSIAN = "gaussian"
BASIS_KINDS = (EXPONENTIAL, GAUSSIAN)

_LN10 = math.log(10.0)        # basis value 0.1
_LN10_9 = math.log(10.0 / 9)  # basis value 0.9


def _check_kind(kind):
    if kind not in BASIS_KINDS:
        raise ValueError(f"basis kind must be one of {BASIS_KINDS}, got {kind!r}")


def radial_basis(h, r, kind):
    """Evaluate the radial basis at distance(s) ``h`` for range ``r``.

    Values lie in [0, 1]; an infinite distance (unreachable geodesic pair)
    maps to 0 influence.
    """
    _check_kind(kind)
    if r <= 0:
        raise ValueError("range parameter r must be > 0")
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0):
        raise ValueError("distances must be non-negative")
    if kind == EXPONENTIAL:
        return np.exp(-h / (r * r))
    return np.exp(-np.square(h * r))


@dataclass
class RSequence:
    """Strictly increasing ladder of candidate range parameters.

    Indices are 1-based (1..R) everywhere they appear in states, traces
    and serialized models. For the exponential basis ascending values run
    local -> global; for the gaussian basis the orientation is reversed.
    """

    values: np.ndarray
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        _check_kind(self.kind)
        if self.values.ndim != 1 or len(self.values) < 1:
            raise ValueError("r sequence needs at least one value")
        if np.any(self.values <= 0):
            raise ValueError("r values must be > 0")
        if len(self.values) > 1 and np.any(np.diff(self.values) <= 0):
            raise ValueError("r sequence must be strictly increasing")

    def __len__(self):
        return len(self.values)

    def value(self, index):
        """Value at 1-based index."""
        if not 1 <= index <= len(self.values):
            raise IndexError(f"r index {index} outside 1..{len(self.values)}")
        return float(self.values[index - 1])

    @property
    def middle_index(self):
        """The neither-very-local-nor-very-global starting choice."""
        return math.ceil(len(self.values) / 2)

    @property
    def most_global_index(self):
        return len(self.values) if self.kind == EXPONENTIAL else 1

    @property
    def most_local_index(self):
        return 1 if self.kind == EXPONENTIAL else len(self.values)


def r_sequence(h, n_values, kind):
    """Build an R-ladder spanning very local to very global influence.

    The endpoints are anchored to the 5% and 95% quantiles of the positive
    off-diagonal candidate distances: the most local choice decays to 0.1
    already at the 5% quantile, the most global choice still holds 0.9 at
    the 95% quantile. Values in between are geometrically spaced.
    """
    _check_kind(kind)
    if n_values < 2:
        raise ValueError("need at least 2 r values")
    values = np.asarray(h.values if hasattr(h, "values") else h, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("expected a distance matrix")
    mask = ~np.eye(values.shape[0], values.shape[1], dtype=bool)
    offdiag = values[mask]
    offdiag = offdiag[np.isfinite(offdiag) & (offdiag > 0)]
    if offdiag.size == 0:
        raise ValueError("degenerate distance matrix: no positive distances")
    q_lo, q_hi = np.quantile(offdiag, [0.05, 0.95])
    q_lo = max(q_lo, q_hi * 1e-6)
    if kind == EXPONENTIAL:
        r_local = math.sqrt(q_lo / _LN10)
        r_global = math.sqrt(q_hi / _LN10_9)
        lo, hi = r_local, r_global
    else:
        r_global = math.sqrt(_LN10_9) / q_hi
        r_local = math.sqrt(_LN10) / q_lo
        lo, hi = r_global, r_local
    return RSequence(np.geomspace(lo, hi, n_values), kind)


def bspline_basis(x, interior_knots, degree=2, boundary=None):
    """B-spline basis matrix via the Cox-de Boor recursion.

    Boundary knots are clamped (repeated degree+1 times) at ``boundary``,
    default the data range, so rows form a partition of unity on the
    closed interval. Values outside the boundary are rejected; callers
    that need extrapolation clamp first.
    """
    x = np.asarray(x, dtype=np.float64)
    interior = np.asarray(interior_knots, dtype=np.float64)
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if boundary is None:
        lo, hi = float(x.min()), float(x.max())
    else:
        lo, hi = map(float, boundary)
    if hi <= lo:
        raise ValueError("degenerate boundary interval")
    if interior.size and (np.any(interior <= lo) or np.any(interior >= hi)):
        raise ValueError("interior knots must lie strictly inside the boundary")
    if interior.size > 1 and np.any(np.diff(interior) <= 0):
        raise ValueError("interior knots must be strictly increasing")
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("x values outside the boundary interval")

    t = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
    n_basis = len(interior) + degree + 1
    b = np.zeros((x.size, len(t) - 1))
    for j in range(len(t) - 1):
        if t[j] < t[j + 1]:
            b[:, j] = (x >= t[j]) & (x < t[j + 1])
    last = np.flatnonzero(np.diff(t) > 0)[-1]
    b[x == hi, last] = 1.0
    for d in range(1, degree + 1):
        nb = np.zeros((x.size, len(t) - 1 - d))
        for j in range(len(t) - 1 - d):
            den1 = t[j + d] - t[j]
            if den1 > 0:
                nb[:, j] += (x - t[j]) / den1 * b[:, j]
            den2 = t[j + d + 1] - t[j + 1]
            if den2 > 0:
                nb[:, j] += (t[j + d + 1] - x) / den2 * b[:, j + 1]
        b = nb
    return b[:, :n_basis]


@dataclass
class CovariateBlocks:
    """Pre-built non-spatial design columns (factors, B-spline blocks)."""

    matrix: np.ndarray
    labels: list

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] != len(self.labels):
            raise ValueError("covariate block shape does not match labels")

    @property
    def n_columns(self):
        return self.matrix.shape[1]


@dataclass
class DesignMatrix:
    """Design matrix with provenance for every radial column.

    Column order is intercept, covariate columns, then one radial column
    per active knot; ``radial`` pairs each radial column with its
    (candidate index, 1-based r index).
    """

    matrix: np.ndarray
    labels: list
    radial: list = field(default_factory=list)
    n_covariate_columns: int = 0

    @property
    def n_rows(self):
        return self.matrix.shape[0]

    @property
    def n_columns(self):
        return self.matrix.shape[1]

    @property
    def n_radial(self):
        return len(self.radial)

    @property
    def has_covariates(self):
        return self.n_covariate_columns > 0

    def criterion_param_count(self):
        """Parameter count used by BIC/AICc.

        Spatial-only models count their radial knots; once covariates
        enter, every column (intercept included) counts.
        """
        if self.has_covariates:
            return self.n_columns
        return self.n_radial


def radial_label(candidate, r_index):
    return f"rbf[k{candidate},r{r_index}]"


def build_design(knot_indices, r_indices, h, rseq, kind, covariate_blocks=None):
    """Assemble intercept + covariate blocks + radial columns.

    ``h`` holds data-to-candidate distances (rows = observations, columns
    = candidate knots); each active knot contributes one radial column
    evaluated at its own r value.
    """
    _check_kind(kind)
    knot_indices = list(knot_indices)
    r_indices = list(r_indices)
    if len(knot_indices) != len(r_indices):
        raise ValueError("knot and r index lists must have equal length")
    if len(set(knot_indices)) != len(knot_indices):
        raise ValueError(f"duplicate knot indices: {sorted(knot_indices)}")
    values = h.values if hasattr(h, "values") else np.asarray(h, float)
    n = values.shape[0]
    cols = [np.ones((n, 1))]
    labels = ["intercept"]
    n_cov = 0
    if covariate_blocks is not None and covariate_blocks.n_columns:
        if covariate_blocks.matrix.shape[0] != n:
            raise ValueError("covariate block row count does not match distances")
        cols.append(covariate_blocks.matrix)
        labels.extend(covariate_blocks.labels)
        n_cov = covariate_blocks.n_columns
    radial = []
    for k, ri in zip(knot_indices, r_indices):
        if not 0 <= k < values.shape[1]:
            raise ValueError(f"knot index {k} outside candidate columns")
        cols.append(radial_basis(values[:, k], rseq.value(ri), kind)[:, None])
        labels.append(radial_label(k, ri))
        radial.append((int(k), int(ri)))
    matrix = np.ascontiguousarray(np.hstack(cols))
    return DesignMatrix(matrix, labels, radial, n_cov)
