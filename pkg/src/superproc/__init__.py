"""Numerical laboratory for subcritical branching mass processes on finite site spaces.

Builds finite-site models (sub-Markov motion + branching mechanism), solves
their nonlinear mass-flow equation, extracts survival-conditioned limits and
the full family of quasi-stationary laws, and cross-checks everything by
closed forms and Monte Carlo simulation.
"""

from .model import (
    BranchingMechanism,
    ConfigError,
    GreyCheck,
    JumpAtom,
    ModelError,
    RateMatrix,
    StateSpace,
    SuperprocessModel,
    ValidationReport,
    fn_vector,
    grey_condition_check,
    load_model,
    measure_vector,
    parse_model_config,
    psi0_eval,
    psi0_prime_eval,
    psi_eval,
    validate_model,
)
from .spectral import (
    H1Diagnostic,
    NotSubcriticalError,
    SpectralError,
    SpectralTriple,
    first_moment,
    h1_diagnostic,
    mean_generator,
    mean_semigroup,
    principal_triple,
    require_subcritical,
    spectral_report,
)
from .cumulant import (
    CumulantTrajectory,
    ExtinctionDivergesError,
    SolverBlowupError,
    SolverOptions,
    extinction_function,
    export_trajectory_csv,
    mild_equation_residual,
    profile_diagnostics,
    ratio_diagnostic,
    semigroup_residual,
    solve_cumulant,
    solve_extended,
)
from .qsd import (
    ConvergenceError,
    QsdSpec,
    QsdSpecError,
    YaglomTransform,
    fixed_point_residual,
    functional_equation_residual,
    gamma_t,
    mass_decay_check,
    qsd_transform,
    yaglom_transform,
)
from .oracle import (
    FellerParams,
    feller_cumulant,
    feller_extinction,
    feller_model,
    feller_yaglom,
)
from .sampler import (
    ConditioningError,
    LaplaceEstimate,
    ParticleEnsemble,
    PathConfig,
    SibuyaParams,
    conditioned_ensemble,
    empirical_laplace,
    ensemble_summary,
    export_ensemble_csv,
    sample_qsd,
    sibuya_sample,
    simulate_ensemble,
    simulate_path,
)

__version__ = "0.1.0"
