"""Exception hierarchy shared by every module.

Conditions that the callers are expected to recover from (bad input,
mesh too coarse, solver breakdown) raise; soft conditions (one-sided
stencils, skipped samples) are reported through diagnostic fields
instead.
"""


class ShrinkLsiError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ShrinkLsiError):
    """Invalid or unknown configuration input.  CLI exit code 2."""


class ComputeError(ShrinkLsiError):
    """A pipeline stage failed to produce a result.  CLI exit code 3."""


# -- geometry ---------------------------------------------------------------

class OutOfChart(ShrinkLsiError):
    """Parameter outside the chart's parameter box."""


class RankDeficientChart(ShrinkLsiError):
    """Chart differential drops rank at a sampled parameter."""


# -- measure ----------------------------------------------------------------

class GridMismatch(ShrinkLsiError):
    """Field grid incompatible with the model or the requested rule."""


class ZeroMass(ShrinkLsiError):
    """Normalization requested for a field with non-positive mass."""


class InsufficientRadii(ShrinkLsiError):
    """Growth diagnostic needs at least three radii."""


# -- deficit functionals ----------------------------------------------------

class NotNormalized(ShrinkLsiError):
    """Density does not have unit mass for the requested weight."""


class NegativeValues(ShrinkLsiError):
    """Density carries negative values."""


class MismatchedInputs(ShrinkLsiError):
    """Cross-check invoked on reports computed from different densities."""


# -- drift-diffusion solver -------------------------------------------------

class PecletViolation(ShrinkLsiError):
    """Mesh-Peclet condition violated and strict mode forbids upwinding."""


class SupportTooLarge(ShrinkLsiError):
    """Density support reaches the truncation boundary."""


class LinearSolveFailure(ShrinkLsiError):
    """Sparse solve did not reach the requested residual."""


class MaximumPrincipleViolation(ShrinkLsiError):
    """Discounted solution violates the sup bound sup|w| <= sup|l|/delta."""


class NoConvergence(ShrinkLsiError):
    """Discount schedule exhausted before the ergodic limit stabilized."""


class GrowthViolation(ShrinkLsiError):
    """No valid sandwich radius exists inside the truncated grid."""


# -- transport certificate --------------------------------------------------

class MinimizerOnBoundary(ShrinkLsiError):
    """Surjectivity probe minimizer landed on the grid boundary."""
