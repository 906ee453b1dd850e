"""Worst-risk robust function-on-function regression."""

from ._validation import (
    DegenerateDenominatorError,
    DegenerateOperatorError,
    InvalidArgumentError,
    NumericFailureError,
    RankDeficientError,
    make_rng,
)
from .basis import (
    BasisSpec,
    CurvePanel,
    EnvLabel,
    SampledCurve,
    ScoreTable,
    eval_basis,
    make_custom_basis,
    make_fourier_sine_basis,
    read_curve_csv,
    riemann_scores,
    write_curve_csv,
)
from .discretize import Partition, delta_partition, make_split, project_piecewise, truncate
from .estimator import FunctionalWorstRiskRegressor, RiemannScoreTransformer
from .moments import Grammians, empirical_grammians, pooled_operator, population_grammians
from .risk import check_decomposition, risk_closed_form, risk_continuity_probe, risk_mc
from .shiftset import (
    Membership,
    ShiftKernelGrid,
    mercer_membership_grid,
    partial_sum_membership,
    psd_membership_scores,
    stationary_fourier_membership,
)
from .sim import SemSpec, paper_example_spec, second_moment, simulate_env, solve_scores, synthesize_curves
from .solver import (
    FitConfig,
    KernelCoeffs,
    beta_l2_distance,
    beta_l2_norm,
    eval_beta_surface,
    fit_empirical,
    solve_causal_limit,
    solve_eigenbasis,
    solve_grammian,
)

__version__ = "0.1.0"
