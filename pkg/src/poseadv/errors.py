"""Exception hierarchy shared across the toolkit."""


class PoseAdvError(Exception):
    """Base class for all toolkit errors."""


class InvalidPoseError(PoseAdvError):
    """Pose fields are non-finite or the matrix is not a rigid transform."""


class GimbalLockError(PoseAdvError):
    """Euler extraction attempted inside the degenerate pitch region."""


class ShapeError(PoseAdvError):
    """Operands have incompatible shapes."""


class SingularityError(PoseAdvError):
    """Division by a value too close to zero."""


class ContractError(PoseAdvError):
    """A caller violated an operation's precondition."""


class EmptyOverlapError(PoseAdvError):
    """View synthesis produced no valid pixels."""


class FormatError(PoseAdvError):
    """A file on disk does not match its documented byte or text layout."""


class ConfigError(PoseAdvError):
    """An experiment configuration is missing or malformed."""


class InputError(PoseAdvError):
    """Model input violates the expected pixel range or layout."""
