"""Exception hierarchy shared by every module."""


class FscilError(Exception):
    """Base class for all library errors."""


class ParameterError(FscilError):
    """An argument value violates a precondition."""


class ShapeError(FscilError):
    """Dimensions or names of numeric containers do not line up."""


class DegenerateVectorError(FscilError):
    """A zero-norm vector was passed where a direction is required."""


class NumericError(FscilError):
    """A non-finite value appeared where finite math is required."""


class FormatError(FscilError):
    """A file does not conform to its declared on-disk format."""


class MissingClassError(FscilError):
    """A class identifier was looked up but is not covered."""


class LabelError(FscilError):
    """A label is unknown to the classifier or duplicates an existing one."""


class CapacityError(FscilError):
    """Per-class sample counts cannot satisfy the requested split."""


class ScheduleError(FscilError):
    """An epoch index falls outside the configured training schedule."""


class ProtocolError(FscilError):
    """A session-stream contract was violated at evaluation time."""


class ConfigError(FscilError):
    """A run configuration failed validation."""
