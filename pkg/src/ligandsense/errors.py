"""Typed errors shared across the toolkit."""


class LigandSenseError(Exception):
    """Base class for every error raised by this package."""


class DomainError(LigandSenseError, ValueError):
    """An argument violates a documented precondition."""


class IndistinguishableLigandsError(LigandSenseError):
    """Unbinding rates are too similar: the binning matrix is numerically singular."""


class NoEventsRetainedError(LigandSenseError):
    """Every binding event fell outside the filtering window."""


class NoUnboundSignalError(LigandSenseError):
    """No unbound-time signal: the S-molecule count is zero, division is undefined."""


class UnidentifiableMixtureError(LigandSenseError):
    """The Fisher information matrix is singular for this mixture."""


class InternalConsistencyError(LigandSenseError):
    """Two redundant computations of the same quantity disagree beyond tolerance."""


class ConfigError(LigandSenseError):
    """A scenario configuration or sweep grid is invalid."""
