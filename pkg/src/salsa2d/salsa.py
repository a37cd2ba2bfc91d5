"""Adaptive knot selection for the bivariate radial-basis intensity surface.

The search starts from a space-filled knot set and repeats three moves
until the fit criterion stops improving: *simplify* (remove knots),
*exchange* (move or add a knot at a poorly-fit region) and *improve*
(nudge each knot to a nearby candidate). Each knot's range parameter is
chosen from a fixed ladder by coordinate-wise hill climbing, either after
each outer pass (default) or woven into every candidate evaluation.

Poor fit is localized by partitioning the data among the remaining legal
candidate locations (nearest under the model's distance metric) and
scoring each region by |observed count - expected count|.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fit as fitmod
from .design import RSequence, build_design, r_sequence
from .errors import NonConvergenceError, RankDeficiencyError
from .geometry import DistanceMatrix, PointSet, euclidean_distances, geodesic_distances
from .ppm import PpmDataset

AFTER_EACH_STEP = "after_each_step"
DURING_STEPS = "during_steps"


@dataclass
class SalsaConfig:
    criterion: str = fitmod.BIC
    n_residual_candidates: int = 10
    n_improve_neighbours: int = 5
    r_select_mode: str = AFTER_EACH_STEP
    max_outer_iterations: int = 20
    rng_seed: int = 0
    # initialisation drop step fires when the largest radial coefficient
    # variance exceeds this multiple of the median one
    drop_variance_ratio: float = 1e4

    def __post_init__(self):
        if self.criterion not in fitmod.CRITERIA:
            raise ValueError(f"criterion must be one of {fitmod.CRITERIA}")
        if self.r_select_mode not in (AFTER_EACH_STEP, DURING_STEPS):
            raise ValueError("r_select_mode must be 'after_each_step' or 'during_steps'")
        if min(self.n_residual_candidates, self.n_improve_neighbours,
               self.max_outer_iterations) < 1:
            raise ValueError("counts must be >= 1")


@dataclass
class KnotState:
    """Active knots (candidate indices, kept sorted) and their r indices."""

    active: list
    r_index: list
    basis: str
    k_min: int
    k_max: int

    def __post_init__(self):
        pairs = sorted(zip(self.active, self.r_index))
        self.active = [int(a) for a, _ in pairs]
        self.r_index = [int(r) for _, r in pairs]
        if len(set(self.active)) != len(self.active):
            raise ValueError("active knots must be distinct")
        if not 2 <= self.k_min <= self.k_max:
            raise ValueError("need 2 <= k_min <= k_max")
        if not self.k_min <= len(self.active) <= self.k_max:
            raise ValueError(
                f"knot count {len(self.active)} outside [{self.k_min}, {self.k_max}]"
            )

    @property
    def k(self):
        return len(self.active)

    def replaced(self, position, candidate, r_index):
        active = list(self.active)
        r = list(self.r_index)
        active[position] = candidate
        r[position] = r_index
        return KnotState(active, r, self.basis, self.k_min, self.k_max)

    def removed(self, position):
        active = [a for i, a in enumerate(self.active) if i != position]
        r = [v for i, v in enumerate(self.r_index) if i != position]
        return KnotState(active, r, self.basis, self.k_min, self.k_max)

    def added(self, candidate, r_index):
        return KnotState(self.active + [candidate], self.r_index + [r_index],
                         self.basis, self.k_min, self.k_max)


@dataclass
class TraceEntry:
    step: str
    action: str
    criterion_before: float
    criterion_after: float
    accepted: bool


@dataclass
class DistanceProvider:
    """Distances from data rows and candidate knots to the candidate set."""

    data_to_candidates: DistanceMatrix
    cand_to_cand: DistanceMatrix

    def __post_init__(self):
        n_cand = self.data_to_candidates.values.shape[1]
        if self.cand_to_cand.values.shape != (n_cand, n_cand):
            raise ValueError("candidate-to-candidate matrix shape mismatch")

    @property
    def metric(self):
        return self.data_to_candidates.metric

    @property
    def n_candidates(self):
        return self.data_to_candidates.values.shape[1]


def make_distance_provider(data, candidates, metric="euclidean", graph=None,
                           algorithm="dijkstra"):
    """Precompute the distance matrices the search needs.

    For the geodesic metric both the data points and the candidate knots
    must be nodes of ``graph`` (pass them as extra_nodes when building it).
    """
    data_points = data.points if isinstance(data, PpmDataset) else np.asarray(data, float)
    cand = candidates.coords if isinstance(candidates, PointSet) else np.asarray(candidates, float)
    if metric == "euclidean":
        d2c = euclidean_distances(data_points, cand)
        c2c = euclidean_distances(cand, cand)
    elif metric == "geodesic":
        if graph is None:
            raise ValueError("geodesic metric requires a grid graph")
        d2c_t = geodesic_distances(graph, PointSet(cand), PointSet(data_points),
                                   algorithm=algorithm)
        c2c = geodesic_distances(graph, PointSet(cand), PointSet(cand),
                                 algorithm=algorithm)
        # forward/backward path sums can differ in the last ulp; symmetrize
        sym = np.minimum(c2c.values, c2c.values.T)
        c2c = DistanceMatrix(sym, "geodesic")
        d2c = DistanceMatrix(d2c_t.values.T, "geodesic")
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return DistanceProvider(d2c, c2c)


def build_candidate_knots(presences, pseudo, pseudo_fraction=0.2, seed=0,
                          paper_style_count=None):
    """Legal knot locations: unique presences plus space-filled pseudo points.

    The pseudo-point count makes the augmentation a ``pseudo_fraction`` share
    of the final candidate set; ``paper_style_count`` pins an absolute count
    instead (e.g. 50).
    """
    unique = presences.deduplicated() if isinstance(presences, PointSet) else PointSet(presences).deduplicated()
    n_unique = len(unique)
    if paper_style_count is not None:
        n_extra = min(int(paper_style_count), len(pseudo))
    elif pseudo_fraction <= 0:
        n_extra = 0
    else:
        if pseudo_fraction >= 1:
            raise ValueError("pseudo_fraction must be < 1")
        n_extra = math.ceil(pseudo_fraction / (1.0 - pseudo_fraction) * n_unique)
        n_extra = min(n_extra, len(pseudo))
    coords = unique.coords
    if n_extra > 0:
        sel = space_fill(pseudo, n_extra, seed=seed)
        coords = np.vstack([coords, pseudo.coords[sel]])
    return PointSet(coords).deduplicated()


def space_fill(candidates, k, distance=None, seed=0, max_sweeps=25):
    """Maximin coverage design of size ``k`` over the candidate points.

    Greedy construction seeded at the point nearest the centroid, followed
    by swap-improvement sweeps on the minimum pairwise distance (so e.g. a
    size-2 design on a segment ends at the two extremes). Deterministic:
    ties go to the lowest candidate index; ``seed`` is accepted for
    interface stability but the procedure involves no randomness.
    """
    coords = candidates.coords if isinstance(candidates, PointSet) else np.asarray(candidates, float)
    n = len(coords)
    if k > n:
        raise ValueError(f"cannot space-fill {k} knots from {n} candidates")
    if k == n:
        return np.arange(n)

    dvals = None
    if distance is not None:
        dvals = distance.values if hasattr(distance, "values") else np.asarray(distance, float)

    def rows(idx):
        if dvals is not None:
            return dvals[np.asarray(idx)]
        pts = coords[np.asarray(idx)]
        return np.hypot(pts[:, None, 0] - coords[None, :, 0],
                        pts[:, None, 1] - coords[None, :, 1])

    centroid = coords.mean(axis=0)
    start = int(np.argmin(np.hypot(coords[:, 0] - centroid[0],
                                   coords[:, 1] - centroid[1])))
    selected = [start]
    min_dist = rows([start])[0].copy()
    while len(selected) < k:
        masked = min_dist.copy()
        masked[selected] = -np.inf
        nxt = int(np.argmax(masked))
        selected.append(nxt)
        np.minimum(min_dist, rows([nxt])[0], out=min_dist)

    sel = np.array(sorted(selected))
    if k < 2:
        return sel
    for _ in range(max_sweeps):
        r = rows(sel)                        # (k, n)
        pair = r[:, sel]                     # (k, k)
        np.fill_diagonal(pair, np.inf)
        current = pair.min()
        in_sel = np.zeros(n, dtype=bool)
        in_sel[sel] = True
        best = None                          # (gain key, p, q)
        for p in range(k):
            rest = np.delete(np.arange(k), p)
            rest_pair = pair[np.ix_(rest, rest)]
            m_rest = rest_pair.min() if len(rest) > 1 else np.inf
            col_min = r[rest].min(axis=0)    # distance of each q to the remaining set
            new_min = np.minimum(m_rest, col_min)
            new_min[in_sel] = -np.inf
            q = int(np.argmax(new_min))
            if new_min[q] > current and (best is None or new_min[q] > best[0]
                                         or (new_min[q] == best[0] and q < best[2])):
                best = (new_min[q], p, q)
        if best is None:
            break
        _, p, q = best
        sel[p] = q
        sel = np.sort(sel)
    return sel


def knot_region_residuals(fitted_intensity, data, provider, active,
                          legal_remaining=None):
    """Score each legal remaining candidate's neighbourhood by |O - E|.

    Every data point (presence and pseudo) is assigned to its nearest
    legal remaining candidate under the model's distance metric; O sums
    observed presences per region, E sums predicted intensity times
    quadrature area over the region's pseudo points. Rows come back sorted
    by descending score (ties toward the lower candidate index).
    """
    all_c = set(range(provider.n_candidates))
    if legal_remaining is None:
        legal = sorted(all_c - set(active))
    else:
        legal = sorted(set(legal_remaining) - set(active))
    if not legal:
        raise ValueError("no legal remaining candidate knots")
    legal = np.asarray(legal, dtype=np.int64)
    sub = provider.data_to_candidates.values[:, legal]
    region = np.argmin(sub, axis=1)  # first minimum -> lowest candidate index

    n_regions = len(legal)
    observed = np.bincount(region[data.is_presence], minlength=n_regions).astype(float)
    pseudo_mask = ~data.is_presence
    expected = np.bincount(
        region[pseudo_mask],
        weights=fitted_intensity[pseudo_mask] * data.w[pseudo_mask],
        minlength=n_regions,
    )
    score = np.abs(observed - expected)
    order = np.lexsort((legal, -score))
    return [
        {"candidate": int(legal[i]), "observed": float(observed[i]),
         "expected": float(expected[i]), "score": float(score[i])}
        for i in order
    ]


class SalsaSearch:
    """One knot-selection run over an immutable dataset and distance provider."""

    def __init__(self, data, candidates, provider, state, rseq, config,
                 covariate_blocks=None):
        self.data = data
        self.candidates = candidates
        self.provider = provider
        self.state = state
        self.rseq = rseq
        self.config = config
        self.covariate_blocks = covariate_blocks
        self.trace = []
        self._score_cache = {}
        self.model = None
        self.score = math.inf

    # -- model evaluation ------------------------------------------------

    def _fit(self, state, warm=True):
        beta0 = None
        design = build_design(state.active, state.r_index,
                              self.provider.data_to_candidates, self.rseq,
                              state.basis, self.covariate_blocks)
        if warm and self.model is not None:
            lookup = dict(zip(self.model.labels, self.model.coefficients))
            beta0 = np.array([lookup.get(lbl, 0.0) for lbl in design.labels])
        model = fitmod.fit_weighted_poisson(design, self.data.y, self.data.w,
                                            beta_start=beta0)
        return model, design

    def _score_state(self, state):
        key = (tuple(state.active), tuple(state.r_index))
        if key in self._score_cache:
            return self._score_cache[key]
        try:
            model, _ = self._fit(state)
            score = model.criterion(self.config.criterion) if model.converged else math.inf
        except RankDeficiencyError:
            score = math.inf
        self._score_cache[key] = score
        return score

    def _evaluate(self, state):
        """Score a candidate state, optionally tuning the r ladder in-step."""
        if self.config.r_select_mode == DURING_STEPS:
            state = self._walk_all_r(state)
        return self._score_state(state), state

    def _walk_all_r(self, state):
        for pos in range(state.k):
            state = self._walk_r(state, pos)
        return state

    def _walk_r(self, state, position):
        """Hill-climb one knot's r index while the criterion improves."""
        n_r = len(self.rseq)
        while True:
            base = self._score_state(state)
            best = None
            for delta in (1, -1):
                ri = state.r_index[position] + delta
                if not 1 <= ri <= n_r:
                    continue
                trial = state.replaced(position, state.active[position], ri)
                s = self._score_state(trial)
                if s < base and (best is None or s < best[0]):
                    best = (s, trial)
            if best is None:
                return state
            state = best[1]

    def _accept(self, step, action, new_state):
        before = self.score
        model, _ = self._fit(new_state)
        self.state = new_state
        self.model = model
        # bookkeeping uses the cached score all comparisons were made with;
        # the refit criterion can differ from it by float dust
        key = (tuple(new_state.active), tuple(new_state.r_index))
        self.score = self._score_cache.get(
            key, model.criterion(self.config.criterion))
        self.trace.append(TraceEntry(step, action, before, self.score, True))

    def _reject(self, step, action="no improving candidate"):
        self.trace.append(TraceEntry(step, action, self.score, self.score, False))

    # -- initialisation ---------------------------------------------------

    def initialise(self):
        """Fit the starting model, dropping variance-inflating knots if needed.

        A start is unhealthy when the fit fails (rank deficiency,
        divergence) or when the largest radial coefficient variance
        exceeds ``drop_variance_ratio`` times the median one, which flags
        near-collinear knots. The worst knot is removed and the model
        refitted until healthy or k_min is reached.
        """
        while True:
            state = self.state
            try:
                model, design = self._fit(state, warm=False)
            except RankDeficiencyError as err:
                drop_pos = self._rank_drop_position(err, state)
                if state.k <= state.k_min or drop_pos is None:
                    raise NonConvergenceError(
                        "initialisation failed: rank-deficient start at k_min"
                    ) from err
                self.trace.append(TraceEntry(
                    "initialise_drop",
                    f"drop knot {state.active[drop_pos]} (rank deficiency)",
                    math.inf, math.inf, True))
                self.state = state.removed(drop_pos)
                continue

            v = self._radial_variances(model, design)
            healthy = (model.converged and np.all(np.isfinite(v))
                       and v.max() <= self.config.drop_variance_ratio
                       * max(np.median(v), 1e-300))
            if healthy:
                score = model.criterion(self.config.criterion)
                self.model, self.score = model, score
                self._score_cache[(tuple(state.active), tuple(state.r_index))] = score
                self.trace.append(TraceEntry(
                    "initialise", f"{state.k} space-filled knots",
                    math.inf, score, True))
                return
            if state.k <= state.k_min:
                raise NonConvergenceError(
                    "initialisation drop step reached k_min without a stable fit"
                )
            drop_pos = int(np.argmax(np.where(np.isfinite(v), v, np.inf)))
            before = model.criterion(self.config.criterion) if model.converged else math.inf
            self.state = state.removed(drop_pos)
            trial_model, _ = self._fit(self.state, warm=False)
            after = (trial_model.criterion(self.config.criterion)
                     if trial_model.converged else math.inf)
            self.trace.append(TraceEntry(
                "initialise_drop",
                f"drop knot {state.active[drop_pos]} (variance contribution)",
                before, after, True))

    def _radial_variances(self, model, design):
        offset = design.n_columns - design.n_radial
        return np.diag(model.coef_covariance)[offset:].copy()

    def _rank_drop_position(self, err, state):
        offset = 1 + (self.covariate_blocks.n_columns if self.covariate_blocks else 0)
        radial_cols = [c for c in err.columns if c >= offset]
        if not radial_cols:
            return None
        return max(radial_cols) - offset

    # -- the three steps --------------------------------------------------

    def simplify_step(self):
        """Remove knots one at a time while the criterion improves."""
        accepted_any = False
        while self.state.k > self.state.k_min:
            best = None  # (score, candidate index, state)
            for pos in range(self.state.k):
                cand = self.state.active[pos]
                score, trial = self._evaluate(self.state.removed(pos))
                if score < self.score and (best is None or score < best[0]
                                           or (score == best[0] and cand < best[1])):
                    best = (score, cand, trial)
            if best is None:
                self._reject("simplify")
                return accepted_any
            self._accept("simplify", f"remove knot {best[1]}", best[2])
            accepted_any = True
        if not accepted_any:
            self._reject("simplify", "k at k_min")
        return accepted_any

    def exchange_step(self):
        """Move or add a knot at one of the worst-fit candidate regions."""
        accepted_any = False
        while True:
            legal = sorted(set(range(self.provider.n_candidates))
                           - set(self.state.active))
            if not legal:
                self._reject("exchange", "no legal remaining candidates")
                return accepted_any
            table = knot_region_residuals(self.model.fitted_intensity, self.data,
                                          self.provider, self.state.active, legal)
            top = [row["candidate"] for row in
                   table[: self.config.n_residual_candidates]]
            best = None  # (score, n_knots, location, source, state, action)
            for loc in top:
                for pos in range(self.state.k):
                    src = self.state.active[pos]
                    trial = self.state.replaced(pos, loc, self.state.r_index[pos])
                    score, trial = self._evaluate(trial)
                    key = (score, trial.k, loc, src)
                    if score < self.score and (best is None or key < best[:4]):
                        best = key + (trial, f"move knot {src} -> {loc}")
                if self.state.k < self.state.k_max:
                    trial = self.state.added(loc, self.rseq.middle_index)
                    score, trial = self._evaluate(trial)
                    key = (score, trial.k, loc, -1)
                    if score < self.score and (best is None or key < best[:4]):
                        best = key + (trial, f"add knot {loc}")
            if best is None:
                self._reject("exchange")
                return accepted_any
            self._accept("exchange", best[5], best[4])
            accepted_any = True

    def improve_step(self):
        """Relocate knots to nearby unused candidates while that helps."""
        c2c = self.provider.cand_to_cand.values
        accepted_any = False
        while True:
            active_set = set(self.state.active)
            best = None  # (score, target, source, state)
            for pos in range(self.state.k):
                src = self.state.active[pos]
                order = np.argsort(c2c[src], kind="stable")
                neighbours = [int(c) for c in order if int(c) not in active_set]
                for tgt in neighbours[: self.config.n_improve_neighbours]:
                    trial = self.state.replaced(pos, tgt, self.state.r_index[pos])
                    score, trial = self._evaluate(trial)
                    key = (score, tgt, src)
                    if score < self.score and (best is None or key < best[:3]):
                        best = key + (trial,)
            if best is None:
                self._reject("improve")
                return accepted_any
            self._accept("improve", f"move knot {best[2]} -> {best[1]}", best[3])
            accepted_any = True

    def select_r(self):
        """Cycle through knots stepping each r index while the fit improves."""
        if len(self.rseq) == 1:
            self._reject("select_r", "single r value")
            return False
        accepted_any = False
        changed = True
        while changed:
            changed = False
            for pos in range(self.state.k):
                while True:
                    base_r = self.state.r_index[pos]
                    trial = self._walk_r_once(pos)
                    if trial is None:
                        break
                    self._accept(
                        "select_r",
                        f"knot {self.state.active[pos]} r {base_r} -> {trial.r_index[pos]}",
                        trial)
                    changed = accepted_any = True
        if not accepted_any:
            self._reject("select_r")
        return accepted_any

    def _walk_r_once(self, position):
        best = None
        for delta in (1, -1):
            ri = self.state.r_index[position] + delta
            if not 1 <= ri <= len(self.rseq):
                continue
            trial = self.state.replaced(position, self.state.active[position], ri)
            score = self._score_state(trial)
            if score < self.score and (best is None or score < best[0]):
                best = (score, trial)
        return best[1] if best else None

    # -- driver -----------------------------------------------------------

    def run(self):
        self.initialise()
        for _ in range(self.config.max_outer_iterations):
            improved = self.simplify_step()
            improved = self.exchange_step() or improved
            improved = self.improve_step() or improved
            if self.config.r_select_mode == AFTER_EACH_STEP:
                improved = self.select_r() or improved
            if not improved:
                break
        else:
            warnings.warn("outer iteration cap reached; returning best so far",
                          stacklevel=2)
        return self.model, self.state, self.trace


def run_salsa2d(data, candidates, provider, basis, k_start, k_min=2, k_max=None,
                config=None, r_count=10, rseq=None, covariate_blocks=None):
    """Run the full knot search and return (model, state, trace)."""
    config = config or SalsaConfig()
    n_cand = provider.n_candidates
    if k_max is None:
        k_max = n_cand
    if not 2 <= k_min <= k_start <= k_max <= n_cand:
        raise ValueError(
            f"need 2 <= k_min <= k_start <= k_max <= n_candidates, got "
            f"({k_min}, {k_start}, {k_max}, {n_cand})"
        )
    if rseq is None:
        rseq = r_sequence(provider.cand_to_cand, r_count, basis)
    start = space_fill(candidates, k_start, distance=provider.cand_to_cand,
                       seed=config.rng_seed)
    state = KnotState(list(start), [rseq.middle_index] * k_start, basis,
                      k_min, k_max)
    search = SalsaSearch(data, candidates, provider, state, rseq, config,
                         covariate_blocks)
    return search.run()
