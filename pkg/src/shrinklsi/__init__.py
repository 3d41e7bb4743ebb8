"""Numerical toolkit for logarithmic Sobolev inequalities on self-shrinkers.

The package discretizes submanifolds of Euclidean space through explicit
charts, evaluates the weighted-Dirichlet / entropy functionals whose
difference is the log-Sobolev deficit, solves the ergodic drift-diffusion
problem behind the ABP construction by vanishing discount, and certifies
the transport-map inequalities (Jacobian bound, surjectivity, mass
comparison) that force the sharp constant.
"""

from .errors import (
    ComputeError,
    ConfigError,
    GridMismatch,
    GrowthViolation,
    InsufficientRadii,
    LinearSolveFailure,
    MaximumPrincipleViolation,
    MinimizerOnBoundary,
    MismatchedInputs,
    NegativeValues,
    NoConvergence,
    NotNormalized,
    OutOfChart,
    PecletViolation,
    RankDeficientChart,
    ShrinkLsiError,
    SupportTooLarge,
    ZeroMass,
)
from .geometry import (
    GeometryFrame,
    ManifoldModel,
    builtin_model,
    cylinder,
    frame_at,
    from_callable,
    from_table,
    plane,
    shrinker_residual,
    sphere,
    tangential_gradient,
)
from .measure import (
    CanonicalDensity,
    DiscreteField,
    GridSpec,
    GrowthCheck,
    bump_density,
    canonical_density,
    export_field_csv,
    field_from_ambient,
    gaussian_density,
    growth_diagnostic,
    import_field_csv,
    integrate,
    make_field,
    make_grid,
    normalize,
)
from .deficits import DeficitReport, consistency_check, deficit, gaussian_form_deficit
from .abp import (
    DriftOperator,
    ErgodicSolution,
    PerturbedDensity,
    SourceTerm,
    assemble,
    canonical_pair_residual,
    dirichlet_energy,
    discounted_solve,
    divergence_residual,
    vanishing_discount,
)
from .transport import (
    TransportCertificate,
    jacobian_check,
    mass_inequality,
    surjectivity_probe,
    surjectivity_sweep,
)
from .entropy import EntropyReport, entropy, mu_estimate

__version__ = "0.1.0"
