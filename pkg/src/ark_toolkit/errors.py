"""
Exception hierarchy for ark_toolkit.

Every error raised by the package derives from ArkToolkitError. Errors that
the integrator may recover from (by retrying a step with a smaller size)
carry ``recoverable=True``.
"""

from typing import Optional


class ArkToolkitError(Exception):
    """Root of all ark_toolkit errors."""

    recoverable: bool = False

    def __init__(self, message: str = "", *, recoverable: Optional[bool] = None):
        super().__init__(message)
        if recoverable is not None:
            self.recoverable = recoverable


class ConfigError(ArkToolkitError, ValueError):
    """Configuration rejected during validation."""


# memory / vectors

class LengthMismatch(ArkToolkitError, ValueError):
    """Operands disagree on length or element width."""


class UseAfterRelease(ArkToolkitError):
    """A released memory block was used."""


class AccessViolation(ArkToolkitError):
    """Data accessed from a memory space where it is not resident."""


class ConcurrentWriteError(ArkToolkitError):
    """Two writers overlapped on the same destination block."""


class EmptyVector(ArkToolkitError, ValueError):
    """Reduction requested on a zero-length vector."""


class InvalidPolicy(ArkToolkitError, ValueError):
    """Execution policy is malformed or used in the wrong role."""


class CommunicatorTimeout(ArkToolkitError, TimeoutError):
    """A collective did not complete because some rank never joined."""


# matrices

class DimensionMismatch(ArkToolkitError, ValueError):
    """Matrix and vector dimensions are incompatible."""


class MissingDiagonal(ArkToolkitError, ValueError):
    """Sparsity pattern lacks a diagonal entry."""


class IndexOutOfRange(ArkToolkitError, IndexError):
    """Block index outside [0, nblocks)."""


class SingularBlock(ArkToolkitError):
    """A block of a batched factorization is singular."""

    def __init__(self, block: int, message: str = ""):
        super().__init__(message or f"block {block} is singular")
        self.block = block


# solvers

class SolverError(ArkToolkitError):
    """Base class for solver failures."""


class MaxIterations(SolverError):
    """Iteration budget exhausted without convergence."""


class Breakdown(SolverError):
    """Krylov breakdown before the tolerance was met."""


class LinearSolveFailure(SolverError):
    """Linear setup or solve callback failed inside a nonlinear solve."""


class ResidualCallbackFailure(SolverError):
    """Residual (right-hand side) callback failed."""


class CallbackError(ArkToolkitError):
    """Raised by user callbacks to signal failure.

    Set ``recoverable=True`` when a retry with different inputs (for example a
    smaller step) may succeed.
    """


# integrator

class InvalidTableau(ArkToolkitError, ValueError):
    """Butcher tableau pair is malformed."""


class ZeroWeightDenominator(ArkToolkitError, ValueError):
    """rtol*|y_i| + atol_i is not positive for some component."""


class NonlinearConvergenceFailure(ArkToolkitError):
    """Stage nonlinear solve failed to converge."""

    recoverable = True


class RepeatedFailure(ArkToolkitError):
    """Too many consecutive nonlinear convergence failures in one step."""


class HMinReached(ArkToolkitError):
    """Step size fell below the configured minimum."""


class RepeatedErrorTestFailures(ArkToolkitError):
    """Too many consecutive error-test failures in one step."""
