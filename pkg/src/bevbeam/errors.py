"""Exception types shared across the package."""


class BevBeamError(Exception):
    """Base class for all package errors."""


class DimensionError(BevBeamError):
    """Array shapes are incompatible for the requested operation."""


class NumericError(BevBeamError):
    """Non-finite values or a numerically invalid state were encountered."""


class ContractError(BevBeamError):
    """An operation was called outside its documented contract."""


class FormatError(BevBeamError):
    """An on-disk artifact does not match its container format."""


class ConfigError(BevBeamError):
    """A run configuration key or value is invalid."""


class CheckpointMismatchError(BevBeamError):
    """A checkpoint's stored configuration conflicts with the requested one."""
