"""Typed errors with stable CLI exit codes.

Exit code contract: 0 success, 2 config, 3 shape/format, 4 data, 5 I/O.
"""


class OodProtoError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(OodProtoError):
    """Invalid configuration value (weights, temperature, flags)."""

    exit_code = 2


class FormatError(OodProtoError):
    """Malformed tensor file header or container."""

    exit_code = 3


class UnsupportedDtype(OodProtoError):
    """Tensor dtype outside the supported {<f4, <f8, <i8} set."""

    exit_code = 3


class ManifestError(OodProtoError):
    """Structurally invalid dataset manifest."""

    exit_code = 3


class ShapeError(OodProtoError):
    """Array dimensions inconsistent with the declared contract."""

    exit_code = 3


class BankFormatError(OodProtoError):
    """Corrupted or schema-incompatible prototype bank."""

    exit_code = 3


class DataError(OodProtoError):
    """Invalid data values (non-finite entries, out-of-range labels, empty input)."""

    exit_code = 4


class EmptyClassError(OodProtoError):
    """A class id has no samples where at least one is required."""

    exit_code = 4


class InsufficientCalibration(OodProtoError):
    """A class is too small to satisfy the calibration quota."""

    exit_code = 4


class DegeneratePrototypeError(OodProtoError):
    """A class mean collapsed to (near) zero norm."""

    exit_code = 4


class SingularCovariance(OodProtoError):
    """Covariance not positive definite even after shrinkage."""

    exit_code = 4


class IoError(OodProtoError):
    """Filesystem read/write failure."""

    exit_code = 5


class ProvenanceWarning(UserWarning):
    """Bank was built from a different manifest than the one being scored."""
