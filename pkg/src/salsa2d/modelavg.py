"""Model-averaging baseline over fixed space-filled knot grids.

Fits one spatial model per (knot count, shared r index) combination,
weights the survivors of a delta-AICc filter with Akaike weights and
averages their intensity predictions pointwise. This is the smooth,
non-adaptive reference the knot search is compared against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import fit as fitmod
from .design import build_design
from .errors import RankDeficiencyError
from .salsa import space_fill

DELTA_AICC_THRESHOLD = 10.0


@dataclass
class EnsembleMember:
    model: "fitmod.FittedModel"
    k: int
    r_index: int
    aicc: float
    delta: float = np.nan
    weight: float = 0.0


@dataclass
class AveragingEnsemble:
    members: list
    delta_threshold: float = DELTA_AICC_THRESHOLD
    strict: bool = False

    @property
    def weights(self):
        return np.array([m.weight for m in self.members])

    @property
    def included(self):
        return [m for m in self.members if m.weight > 0.0]

    @property
    def n_averaged(self):
        return len(self.included)


def fit_grid(data, candidates, provider, k_list, rseq, basis,
             covariate_blocks=None):
    """Fit every (K, r) member on its space-filled knot set.

    All knots in a member share one r value. Members whose fit fails are
    reported with a warning and excluded.
    """
    members = []
    for k in k_list:
        knots = space_fill(candidates, int(k), distance=provider.cand_to_cand)
        for ri in range(1, len(rseq) + 1):
            design = build_design(list(knots), [ri] * len(knots),
                                  provider.data_to_candidates, rseq, basis,
                                  covariate_blocks)
            try:
                model = fitmod.fit_weighted_poisson(design, data.y, data.w)
            except RankDeficiencyError as err:
                warnings.warn(f"member (k={k}, r={ri}) failed: {err}", stacklevel=2)
                continue
            if not model.converged:
                warnings.warn(f"member (k={k}, r={ri}) did not converge; excluded",
                              stacklevel=2)
                continue
            if model.aicc is None:
                warnings.warn(f"member (k={k}, r={ri}) has undefined AICc; excluded",
                              stacklevel=2)
                continue
            members.append(EnsembleMember(model, int(k), ri, model.aicc))
    if not members:
        raise RankDeficiencyError("no ensemble member could be fitted")
    return members


def aicc_weights(members, delta_threshold=DELTA_AICC_THRESHOLD, strict=False):
    """Akaike weights over the members passing the delta-AICc filter.

    ``strict`` switches the filter from <= to < at the threshold.
    """
    if not members:
        raise ValueError("need at least one member")
    best = min(m.aicc for m in members)
    included = []
    for m in members:
        m.delta = m.aicc - best
        keep = m.delta < delta_threshold if strict else m.delta <= delta_threshold
        m.weight = 0.0
        if keep:
            included.append(m)
    raw = np.exp(-0.5 * np.array([m.delta for m in included]))
    total = raw.sum()
    for m, r in zip(included, raw):
        m.weight = float(r / total)
    return AveragingEnsemble(list(members), delta_threshold, strict)


def member_prediction(member, new_dists, rseq, basis):
    """Intensity prediction of one member at new locations."""
    knots = [c for c, _ in member.model.radial]
    design = build_design(knots, [ri for _, ri in member.model.radial],
                          new_dists, rseq, basis)
    return fitmod.predict_intensity(member.model, design)


def averaged_prediction(ensemble, new_dists, rseq, basis):
    """Pointwise weighted average of member intensities.

    ``new_dists``: distances from the new locations to the candidate set,
    with the same candidate columns the members were fitted against.
    """
    included = ensemble.included
    if not included:
        raise ValueError("ensemble has no weighted members; run aicc_weights first")
    values = new_dists.values if hasattr(new_dists, "values") else np.asarray(new_dists)
    out = np.zeros(values.shape[0])
    for m in included:
        out += m.weight * member_prediction(m, new_dists, rseq, basis)
    return out


def ensemble_log_pseudolikelihood(ensemble, data, provider, rseq, basis):
    """Weighted Poisson objective of the averaged intensity surface."""
    lam = averaged_prediction(ensemble, provider.data_to_candidates, rseq, basis)
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    terms = data.w * np.where(data.y > 0, data.y * log_lam, 0.0) - data.w * lam
    return float(np.sum(terms))
