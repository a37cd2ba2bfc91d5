"""Spatially adaptive knot selection for bivariate radial-basis intensity
surfaces, fitted as downweighted Poisson point-process regressions, with
geodesic distances around exclusion zones and a model-averaging baseline."""

__version__ = "0.1.0"

from .design import (
    EXPONENTIAL,
    GAUSSIAN,
    RSequence,
    bspline_basis,
    build_design,
    r_sequence,
    radial_basis,
)
from .fit import FittedModel, aicc, bic, fit_weighted_poisson, log_pseudolikelihood, predict_intensity
from .geometry import (
    DistanceMatrix,
    FeatureSet,
    GridGraph,
    PointSet,
    Polygon,
    build_grid_graph,
    distance_to_nearest_feature,
    euclidean_distances,
    geodesic_distances,
    point_in_polygon,
)
from .modelavg import AveragingEnsemble, aicc_weights, averaged_prediction, fit_grid
from .ppm import PpmDataset, assemble_dataset, generate_pseudo_absences, grid_convergence
from .salsa import (
    DistanceProvider,
    KnotState,
    SalsaConfig,
    SalsaSearch,
    build_candidate_knots,
    knot_region_residuals,
    make_distance_provider,
    run_salsa2d,
    space_fill,
)
from .terms import (
    FactorThresholdSpec,
    SmoothTermSpec,
    TermSet,
    partial_effect,
    select_knots_1d,
    select_threshold,
)
