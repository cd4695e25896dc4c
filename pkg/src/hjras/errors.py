"""Exception types shared across the package.

The CLI maps these onto process exit codes: config problems exit 2,
numeric failures exit 3, verification failures exit 4.
"""


class HJRasError(Exception):
    """Base class for package-specific failures."""


class ConfigError(HJRasError):
    """A problem configuration failed to parse or validate.

    ``field`` names the offending key path (e.g. ``targets[0].window``)
    so the CLI diagnostic can point at it.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DynamicsEvaluationError(HJRasError):
    """A system evaluator returned non-finite values."""


class SolverDivergenceError(HJRasError):
    """The value iteration produced non-finite node values."""


class DegenerateDynamicsError(HJRasError):
    """All dissipation bounds are zero; no CFL step exists."""


class NotStabilizableError(HJRasError):
    """No invariant-set offset makes the stabilization value converge."""


class StabilizeRegionUnusableError(HJRasError):
    """The obstacle intersects every sublevel set of the stabilization value."""


class DomainExit(HJRasError):
    """A query or trajectory left the grid along a non-periodic dimension."""


class VerificationFailure(HJRasError):
    """A synthesized trajectory failed post-hoc verification."""
