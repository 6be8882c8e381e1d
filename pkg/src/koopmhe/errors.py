"""Exception types shared across the toolkit.

Each class names the contract violation it reports; modules raise these
instead of bare ValueError so callers can discriminate failure modes.
"""


class KoopmheError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(KoopmheError, ValueError):
    """Operands have incompatible dimensions."""


class ShapeMismatch(DimensionMismatch):
    """Array shapes disagree (parameter/gradient pairing, etc.)."""


class DepthExceedsLength(KoopmheError, ValueError):
    """Requested Hankel depth exceeds the sequence length."""


class EmptySequence(KoopmheError, ValueError):
    """An operation received a zero-length sequence."""


class IndexOutOfRange(KoopmheError, IndexError):
    """Window indices fall outside the stored sequence."""


class TrajectoryTooShort(KoopmheError, ValueError):
    """Trajectory shorter than the operation requires."""


class UnsupportedPrimitive(KoopmheError, TypeError):
    """Computation-graph request outside the supported primitive set."""


class NonFiniteInput(KoopmheError, ValueError):
    """NaN or infinity found in an input array."""


class NonFiniteLoss(KoopmheError, ArithmeticError):
    """Loss evaluation produced a non-finite value."""


class NonFiniteResult(KoopmheError, ArithmeticError):
    """Numerical result is NaN or infinite."""


class NonFiniteState(KoopmheError, ArithmeticError):
    """Plant rollout diverged. Carries the valid prefix when available."""

    def __init__(self, message, prefix=None):
        super().__init__(message)
        self.prefix = prefix


class DivergedLoss(NonFiniteLoss):
    """Training loss became non-finite."""


class ConfigInvalid(KoopmheError, ValueError):
    """Configuration violates its invariants."""


class InsufficientData(KoopmheError, ValueError):
    """Not enough data columns/samples for the requested check."""


class UnstableParameters(KoopmheError, ValueError):
    """Benchmark parameters violate the stability/detectability preconditions."""


class SingularKkt(KoopmheError, ArithmeticError):
    """KKT system is singular even after diagonal regularization."""


class SolverFailed(KoopmheError, RuntimeError):
    """QP solver did not return a usable solution."""


class MissingArtifact(KoopmheError, FileNotFoundError):
    """A required pipeline artifact is absent on disk."""
