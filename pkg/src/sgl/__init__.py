"""Sparse Group LASSO solvers, state-evolution prediction, and calibration."""

from .model import (
    BernoulliGaussian,
    DesignSpec,
    GroupPartition,
    PointMassMixture,
    PriorSpec,
    ProblemInstance,
    ZeroSignal,
    contiguous_partition,
    cost,
    generate_instance,
    make_partition,
    penalty,
)
from .prox import prox_sgl, prox_sgl_jacobian_diag, soft_threshold
from .solvers import (
    EmpiricalTau,
    FixedLambda,
    SEDriven,
    SolverConfig,
    SolverTrace,
    solve,
    solve_amp,
    solve_blockwise,
    solve_fista,
    solve_ista,
    solve_vamp,
)
from .state_evolution import (
    SEOutcome,
    SEParams,
    admissible_interval,
    alpha_of_lambda,
    lambda_of_alpha,
    mixed_group_params,
    perfect_group_params,
    predict_metrics,
    se_fixed_point,
    se_map,
    t_func,
)

__version__ = "0.1.0"
