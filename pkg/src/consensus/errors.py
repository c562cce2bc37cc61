"""
Exception types raised by the consensus and simulation packages.

All of them are ValueErrors so callers that only care about "bad input"
can keep catching ValueError.
"""


class ConfigurationError(ValueError):
    """Invalid configuration (duplicate key address, timer overflow, bad knobs)."""


class DomainError(ValueError):
    """Arithmetic helper called outside its domain, e.g. quorum(0)."""


class MessageConstructionError(ValueError):
    """A consensus message was built with inconsistent fields."""


class ChainAppendError(ValueError):
    """A finalised block could not be appended to a chain."""


class DecodeError(ValueError):
    """Canonical bytes could not be decoded."""


class UnboundedTerminationError(ValueError):
    """No terminating round exists within the configured search bound."""


class ScenarioError(ValueError):
    """A scenario file failed to parse or validate."""
