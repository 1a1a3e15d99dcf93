"""Exception types raised across the package."""


class OptRankError(Exception):
    """Base class for all package errors."""


class FamilyError(OptRankError, ValueError):
    """Invalid model family definition (bad field or field combination)."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ShapeError(OptRankError, ValueError):
    """Parameter vector or input point does not match the family."""


class TargetError(OptRankError, ValueError):
    """Target request is out of range or not expressible in a family."""


class ConfigError(OptRankError, ValueError):
    """Malformed spec file, config record or run directory."""


class RunDirError(ConfigError):
    """A run directory is missing a file or its contents are inconsistent."""
