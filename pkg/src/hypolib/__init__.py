"""Hypo-distances, approximation and sample-average estimation for
upper semicontinuous functions sampled on grids."""

__version__ = "0.1.0"

from .core import (
    NEG_INF,
    SCHEMA,
    BoxPartition,
    DomainError,
    EmptyHypographError,
    EpiSpline0,
    GridDomain,
    GridFn,
    MaxAffine,
    PaDiff,
    gridfn_eval,
    pa_eval,
    pa_to_gridfn,
)
from .metric import DistReport, check_sandwich, dhat_rho, dist_to_hypo, dl, dl_rho, excess, hausdorff
from .pafit import DifferenceOfMaxRegressor, fit_difference_of_max, pa_fit
from .approximation import (
    CoverParams,
    PackingFamily,
    PipelineSchedule,
    PipelineStage,
    cover_params,
    epispline_approx,
    hypo_approx_sequence,
    meshsize,
    moreau_envelope,
    packing_family,
    quantize_to_cover,
    truncate_and_restrict,
    verify_packing_separation,
)
from .estimation import (
    LS_DENSITY,
    LS_REGRESSION,
    MLE_DENSITY,
    FunctionClass,
    Objective,
    RateSpec,
    SAAEstimator,
    Sample,
    Truth,
    argmin_excess_check,
    check_equi_usc,
    check_holder_pointwise,
    confidence_radius,
    consistency_experiment,
    coverage_experiment,
    level_set_member,
    population_objective,
    project_class,
    rate_experiment,
    rate_r_nu,
    saa_solve,
    sample_average,
)
from .io import FormatError, gridfn_from_csv, gridfn_to_csv

__all__ = [name for name in dir() if not name.startswith("_")]
