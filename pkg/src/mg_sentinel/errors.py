"""Exception hierarchy shared by the microgrid toolkit."""


class MicrogridError(Exception):
    """Base class for every error raised by mg_sentinel."""


class DimensionError(MicrogridError, ValueError):
    """Matrix or vector shapes do not fit the requested operation."""


class InputError(MicrogridError, ValueError):
    """An argument is outside the domain an operation accepts."""


class PlacementError(MicrogridError):
    """Requested spectrum cannot be assigned."""


class SynthesisError(MicrogridError):
    """No stealthy attack exists for the requested channels."""


class DesignError(MicrogridError):
    """Observer gain design failed.

    Attributes:
        mode: Eigenvalue of the mode that could not be assigned, if known.
    """

    def __init__(self, message: str, mode: complex | None = None) -> None:
        """Store the offending mode alongside the message."""
        super().__init__(message)
        self.mode = mode


class NetworkError(MicrogridError):
    """Electrical network equations are singular or unsolvable."""


class ReductionError(NetworkError):
    """The eliminated block of a Kron reduction is singular."""


class SingularityError(MicrogridError):
    """The algebraic Jacobian block of the reduced model is singular."""


class IntegrationError(MicrogridError):
    """A time integration step produced non-finite values.

    Attributes:
        t: Simulation time of the failing step in seconds.
    """

    def __init__(self, message: str, t: float) -> None:
        """Attach the failure time to the message."""
        super().__init__(f"{message} (t={t:.6g} s)")
        self.t = t


class DivergenceError(IntegrationError):
    """Plant state norm exceeded the blow-up limit."""


class ObserverDivergenceError(IntegrationError):
    """Observer estimate became non-finite."""


class DispatchError(MicrogridError):
    """Dispatch found no feasible iterate.

    Attributes:
        best_violation: Smallest total constraint violation seen.
    """

    def __init__(self, message: str, best_violation: float) -> None:
        """Attach the best violation to the message."""
        super().__init__(f"{message} (best violation {best_violation:.6g})")
        self.best_violation = best_violation


class ConfigError(MicrogridError):
    """A scenario file failed to parse or validate.

    Attributes:
        path: Dotted key path, e.g. ``dg.2.m_p``.
        reason: Human readable cause.
        line_number: 1-based line in the source text, if known.
        line_content: Text of that line, if known.
    """

    def __init__(
        self,
        path: str,
        reason: str,
        line_number: int | None = None,
        line_content: str | None = None,
    ) -> None:
        """Build the diagnostic message with line context."""
        where = f"line {line_number}: " if line_number is not None else ""
        context = f"\n    {line_content.strip()}" if line_content else ""
        super().__init__(f"{where}{path}: {reason}{context}")
        self.path = path
        self.reason = reason
        self.line_number = line_number
        self.line_content = line_content
