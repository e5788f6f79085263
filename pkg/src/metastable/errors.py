"""Exception types raised across the package."""


class MetastableError(Exception):
    """Base class for all computational failures."""


class PreconditionError(MetastableError, ValueError):
    pass


class NonConvergence(MetastableError):
    pass


class DegenerateHessian(MetastableError):
    pass


class NotDoubleWell(MetastableError):
    pass


class NoGate(MetastableError):
    pass


class DimensionUnsupported(MetastableError):
    pass


class NotPositive(MetastableError):
    """The drift matrix fails v.Mv > 0."""


class SpectrumShape(MetastableError):
    pass


class SignNormalization(MetastableError):
    pass


class QuadratureUnderflow(MetastableError):
    pass


class EmptyGateList(MetastableError):
    pass


class ResolutionTooCoarse(MetastableError):
    pass


class NonFiniteWeight(MetastableError):
    pass


class StencilNotPositive(MetastableError):
    """Discrete symmetric form is not positive definite (cross term too large)."""


class SolverDivergence(MetastableError):
    pass


class MaximumPrincipleViolation(MetastableError):
    pass


class NegativeMass(MetastableError):
    pass


class InfeasibleFlow(MetastableError):
    pass


class ZeroEnergy(MetastableError):
    pass


class DisconnectedWells(MetastableError):
    pass


class BlowUp(MetastableError):
    pass


class AllCensored(MetastableError):
    pass


class InsufficientData(MetastableError):
    pass


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""
