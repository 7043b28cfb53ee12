"""Exception types shared across the package.

Each carries an ``exit_code`` so the CLI can map failures to distinct
process exit statuses without a lookup table.
"""


class HoughTrackError(Exception):
    exit_code = 1
    kind = "internal"


class ShapeError(HoughTrackError, ValueError):
    exit_code = 5
    kind = "shape"


class ConfigError(HoughTrackError, ValueError):
    exit_code = 3
    kind = "config"


class DataError(HoughTrackError, OSError):
    """Missing or malformed input files."""

    exit_code = 4
    kind = "io"


class NumericalError(HoughTrackError, ArithmeticError):
    """Non-finite values or a failed gradient check."""

    exit_code = 6
    kind = "numeric"


class TrackingFailure(NumericalError):
    kind = "tracking"
