"""Exception hierarchy shared across the package."""


class VarlabError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(VarlabError, ValueError):
    """Operands live in incompatible dimensions."""


class ResolutionError(VarlabError, ValueError):
    """Query scale is below what the sample resolution supports."""


class ConfigError(VarlabError, ValueError):
    """Invalid experiment configuration."""


class ApproximationError(VarlabError):
    """Structured failure of a constructive approximation step.

    `node` identifies the grid node at which the construction broke down.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node
