"""Exception types shared across the package."""


class KinlangError(Exception):
    """Base class for all package errors."""


class InvalidInputError(KinlangError, ValueError):
    """An argument violates a documented precondition (wrong shape, bad count, ...)."""


class DomainError(KinlangError, ValueError):
    """A position lies outside the open set where the potential is finite."""


class EscapedDomain(KinlangError):
    """An unstopped chain proposed a state with no numerical meaning.

    Carries the last valid state so the caller can decide what to do with
    the chain.
    """

    def __init__(self, state, step: int | None = None, message: str = ""):
        self.state = state
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(message or f"chain escaped the potential domain{where}")


class EscapedEnsembleError(KinlangError):
    """Every chain of an ensemble escaped the domain before finishing."""

    def __init__(self, escape_count: int, n_chains: int, first_escape_step: int):
        self.escape_count = escape_count
        self.n_chains = n_chains
        self.first_escape_step = first_escape_step
        super().__init__(
            f"all {n_chains} chains escaped the domain "
            f"(earliest escape at step {first_escape_step})"
        )


class InsufficientSignalError(KinlangError):
    """Too few error estimates rise above their confidence interval to fit a slope."""

    def __init__(self, points_used: int, points_needed: int = 3):
        self.points_used = points_used
        self.points_needed = points_needed
        super().__init__(
            f"only {points_used} grid points carry signal above noise, "
            f"need {points_needed} for an order fit"
        )


class ConfigError(KinlangError, ValueError):
    """Experiment configuration file is malformed or inconsistent."""
