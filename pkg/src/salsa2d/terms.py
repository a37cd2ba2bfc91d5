"""One-dimensional covariate terms: B-spline smooths and factor thresholds.

Interior knots for a smooth are chosen by a greedy quantile search
(forward additions, backward pruning, each accepted only on a strict
criterion improvement) rather than a full adaptive 1-D knot algorithm;
the search is isolated behind :class:`SmoothTermSpec` so it can be
swapped without touching callers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fit as fitmod
from .design import CovariateBlocks, DesignMatrix, bspline_basis
from .errors import RankDeficiencyError


@dataclass
class SmoothTermSpec:
    name: str
    degree: int = 2
    interior_knots: list = field(default_factory=list)
    boundary: tuple = None
    selection: str = "bic_search"  # or "fixed"

    def __post_init__(self):
        self.interior_knots = [float(k) for k in self.interior_knots]
        if sorted(self.interior_knots) != self.interior_knots:
            raise ValueError("interior knots must be increasing")

    @property
    def n_columns(self):
        # the constant basis function is dropped (intercept carries it)
        return len(self.interior_knots) + self.degree

    def labels(self):
        return [f"s({self.name})[{j}]" for j in range(self.n_columns)]

    def columns(self, x):
        b = bspline_basis(x, self.interior_knots, self.degree, self.boundary)
        return b[:, 1:]  # drop one column: rows sum to 1, intercept is separate


@dataclass
class FactorThresholdSpec:
    name: str
    candidates: list
    threshold: float

    def __post_init__(self):
        self.candidates = [float(c) for c in self.candidates]
        if self.threshold not in self.candidates:
            raise ValueError("chosen threshold must be one of the candidates")

    def label(self):
        return f"{self.name}<{self.threshold:g}"

    def columns(self, x):
        return (np.asarray(x, float) < self.threshold).astype(float)[:, None]


@dataclass
class TermSet:
    """The non-spatial part of a model: factor terms plus smooth terms."""

    factors: list = field(default_factory=list)
    smooths: list = field(default_factory=list)

    def covariate_names(self):
        return [t.name for t in self.factors] + [t.name for t in self.smooths]

    def build(self, covariates):
        """Assemble covariate design columns from named covariate arrays."""
        cols, labels = [], []
        for term in self.factors:
            cols.append(term.columns(covariates[term.name]))
            labels.append(term.label())
        for term in self.smooths:
            cols.append(term.columns(covariates[term.name]))
            labels.extend(term.labels())
        if not cols:
            return CovariateBlocks(np.empty((0, 0)), [])
        return CovariateBlocks(np.hstack(cols), labels)


def _fit_with_blocks(data, blocks):
    n = data.n_total
    matrix = np.hstack([np.ones((n, 1))] + ([blocks.matrix] if blocks.n_columns else []))
    design = DesignMatrix(matrix, ["intercept"] + blocks.labels,
                          radial=[], n_covariate_columns=blocks.n_columns)
    return fitmod.fit_weighted_poisson(design, data.y, data.w)


def _criterion_of(data, term_set, criterion):
    try:
        model = _fit_with_blocks(data, term_set.build(data.covariates))
    except RankDeficiencyError:
        return np.inf
    if not model.converged:
        return np.inf
    return model.criterion(criterion)


def select_knots_1d(data, covariate, max_knots=5, criterion=fitmod.BIC,
                    n_quantile_bins=20, degree=2, base_terms=None):
    """Greedy quantile-knot search for one smooth term.

    Candidate interior knots sit at covariate quantiles; forward additions
    and backward prunings are accepted only when the criterion strictly
    improves. ``base_terms`` (a TermSet) holds any already-selected terms
    fixed during the search.
    """
    x = np.asarray(data.covariates[covariate], float)
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 0:
        return SmoothTermSpec(covariate, degree, [], (lo, lo + 1.0))

    qs = np.quantile(x, np.linspace(0, 1, n_quantile_bins + 1)[1:-1])
    candidates = sorted({float(q) for q in qs if lo < q < hi})

    base = base_terms or TermSet()

    def with_knots(knots):
        spec = SmoothTermSpec(covariate, degree, sorted(knots), (lo, hi))
        return TermSet(list(base.factors), list(base.smooths) + [spec])

    current_knots = []
    current_score = _criterion_of(data, with_knots(current_knots), criterion)
    while True:
        changed = False
        # forward
        while len(current_knots) < max_knots:
            best = None
            for cand in candidates:
                if cand in current_knots:
                    continue
                s = _criterion_of(data, with_knots(current_knots + [cand]), criterion)
                if s < current_score and (best is None or s < best[0]):
                    best = (s, cand)
            if best is None:
                break
            current_score = best[0]
            current_knots = sorted(current_knots + [best[1]])
            changed = True
        # backward
        while current_knots:
            best = None
            for cand in current_knots:
                trimmed = [k for k in current_knots if k != cand]
                s = _criterion_of(data, with_knots(trimmed), criterion)
                if s < current_score and (best is None or s < best[0]):
                    best = (s, cand)
            if best is None:
                break
            current_score = best[0]
            current_knots = [k for k in current_knots if k != best[1]]
            changed = True
        if not changed:
            break
    return SmoothTermSpec(covariate, degree, current_knots, (lo, hi))


def select_threshold(data, covariate, candidates, criterion=fitmod.BIC,
                     base_terms=None):
    """Pick the binary-factor cutoff with the best criterion (ties: smaller)."""
    candidates = [float(c) for c in candidates]
    if not candidates:
        raise ValueError("need at least one candidate threshold")
    base = base_terms or TermSet()
    best = None
    for t in sorted(candidates):
        spec = FactorThresholdSpec(covariate, candidates, t)
        term_set = TermSet(list(base.factors) + [spec], list(base.smooths))
        s = _criterion_of(data, term_set, criterion)
        if best is None or s < best[0]:
            best = (s, t)
    return FactorThresholdSpec(covariate, candidates, best[1])


def spatial_contribution(model, design):
    """Per-row radial-block contribution to the linear predictor."""
    n_radial = len(model.radial)
    if n_radial == 0:
        return np.zeros(design.matrix.shape[0])
    block = design.matrix[:, design.n_columns - n_radial:]
    return block @ model.coefficients[-n_radial:]


def partial_effect(model, term_set, term, grid, fixed, spatial_reference=0.0):
    """Predicted intensity along one covariate, everything else held fixed.

    ``fixed`` maps every other covariate name to its held value;
    ``spatial_reference`` is the spatial linear-predictor contribution to
    add (typically the training mean). Grid values outside the term's
    training range are clamped with a warning.
    """
    grid = np.asarray(grid, dtype=np.float64)
    names = term_set.covariate_names()
    covs = {}
    for name in names:
        if name == term:
            covs[name] = grid.copy()
        else:
            if name not in fixed:
                raise ValueError(f"no fixed value supplied for covariate {name!r}")
            covs[name] = np.full(grid.shape, float(fixed[name]))
    for smooth in term_set.smooths:
        if smooth.name == term and smooth.boundary is not None:
            lo, hi = smooth.boundary
            if grid.min() < lo or grid.max() > hi:
                warnings.warn(
                    f"grid values outside the training range of {term!r}; clamped",
                    stacklevel=2,
                )
                covs[term] = np.clip(covs[term], lo, hi)
    blocks = term_set.build(covs)
    n_cov = blocks.n_columns
    if model.labels[1 : 1 + n_cov] != blocks.labels:
        raise ValueError("term set does not match the fitted model's columns")
    beta0 = model.coefficients[0]
    eta = np.full(len(grid), beta0 + float(spatial_reference))
    if n_cov:
        eta += blocks.matrix @ model.coefficients[1 : 1 + n_cov]
    return np.exp(eta)
