"""Subsampled tangent-space stability selection for low-rank estimation.

The package provides:

* exact tangent-space and projector algebra on p1 x p2 matrices
  (:mod:`ss3.linalg`),
* false-discovery / power / misalignment metrics with closed-form traces
  (:mod:`ss3.metrics`),
* base low-rank estimators and tangent-constrained refitting
  (:mod:`ss3.estimators`),
* complementary-partition subsampling and synthetic data generators
  (:mod:`ss3.sampling`),
* the stability selection algorithm over averaged projectors
  (:mod:`ss3.stability`),
* computable false-discovery bounds (:mod:`ss3.bounds`),
* a CLI with experiment presets (:mod:`ss3.cli`).
"""

from ss3.linalg import (
    MatrixOperator,
    Subspace,
    TangentSpace,
    haar_subspace,
    op_add,
    op_compose,
    op_scale,
    op_trace,
    orthonormalize,
    principal_angles,
    span_operator,
    tangent_apply,
    tangent_apply_complement,
    tangent_complement_operator,
    tangent_operator,
)
from ss3.metrics import (
    DiscoveryMetrics,
    column_metrics,
    commutator_frobenius,
    coordinate_subspace,
    diagonal_tangent,
    discovery_metrics,
    misalignment_mu,
    tangent_overlap,
    tangent_span_commutator,
)
from ss3.estimators import (
    EstimatorConfig,
    ObservationSet,
    als_complete,
    extract_tangent,
    pca_column,
    refit,
    spectral_denoise,
    svt_complete,
)
from ss3.sampling import (
    BagPlan,
    SyntheticTruth,
    calibrate_snr,
    complementary_bags,
    gen_completion,
    gen_denoise,
    gen_linear,
    gen_low_rank,
)
from ss3.stability import (
    AveragedProjectors,
    StabilityReport,
    algorithm1,
    algorithm1_modified,
    average_projectors,
    column_stability,
    run_pipeline,
    stable_membership,
)
from ss3.bounds import (
    BoundReport,
    dimT_bound,
    heuristic_alignment_diag,
    kappa_bag_term,
    kappa_indiv_estimate,
    prop5_bound,
    prop6_bound,
    theorem4_terms,
    variable_selection_bound,
)

__version__ = "0.1.0"

__all__ = [
    "MatrixOperator",
    "Subspace",
    "TangentSpace",
    "haar_subspace",
    "op_add",
    "op_compose",
    "op_scale",
    "op_trace",
    "orthonormalize",
    "principal_angles",
    "span_operator",
    "tangent_apply",
    "tangent_apply_complement",
    "tangent_complement_operator",
    "tangent_operator",
    "DiscoveryMetrics",
    "column_metrics",
    "commutator_frobenius",
    "coordinate_subspace",
    "diagonal_tangent",
    "discovery_metrics",
    "misalignment_mu",
    "tangent_overlap",
    "tangent_span_commutator",
    "EstimatorConfig",
    "ObservationSet",
    "als_complete",
    "extract_tangent",
    "pca_column",
    "refit",
    "spectral_denoise",
    "svt_complete",
    "BagPlan",
    "SyntheticTruth",
    "calibrate_snr",
    "complementary_bags",
    "gen_completion",
    "gen_denoise",
    "gen_linear",
    "gen_low_rank",
    "AveragedProjectors",
    "StabilityReport",
    "algorithm1",
    "algorithm1_modified",
    "average_projectors",
    "column_stability",
    "run_pipeline",
    "stable_membership",
    "BoundReport",
    "dimT_bound",
    "heuristic_alignment_diag",
    "kappa_bag_term",
    "kappa_indiv_estimate",
    "prop5_bound",
    "prop6_bound",
    "theorem4_terms",
    "variable_selection_bound",
]
