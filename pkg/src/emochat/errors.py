"""Exception types shared across the package."""


class EmoChatError(Exception):
    """Base class for all library errors."""


class ConfigurationError(EmoChatError):
    """A config value or input specification is unusable."""


class FormatError(EmoChatError):
    """An external file does not match its documented format."""


class ShapeError(EmoChatError):
    """Array arguments have inconsistent dimensions."""


class ValidationError(EmoChatError):
    """An input value violates a documented precondition."""


class IntegrityError(EmoChatError):
    """Two keyed collections that must match do not."""


class MetricError(EmoChatError):
    """A metric is undefined for the given inputs."""


class DivergenceError(EmoChatError):
    """Training produced a non-finite loss."""
