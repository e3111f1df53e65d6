"""Exception types shared across the simulator."""


class SwarmstepError(Exception):
    """Base class for all simulator errors."""


class InvalidStateError(SwarmstepError):
    """Non-finite or otherwise corrupt numerical state was encountered."""


class ValidationError(SwarmstepError):
    """Caller-supplied data violates a precondition."""


class ProtocolError(SwarmstepError):
    """Malformed or oversized wire frame / message."""


class ConfigError(SwarmstepError):
    """Bad configuration file or startup parameters."""
