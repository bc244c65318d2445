"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (see harness.cli), so new error
conditions should reuse one of the categories below rather than raising bare
exceptions.
"""


class ConfigError(Exception):
    """Bad configuration: unknown keys, unparsable values, invalid ranges."""


class DataError(Exception):
    """Bad or missing data: broken manifests, unreadable files, bad shapes."""


class BehindCameraError(ValueError):
    """A point that must have positive camera-frame depth does not."""


class EnhancerUnavailable(RuntimeError):
    """The remote enhancer could not be reached after all retries."""


class EnhanceProtocolError(RuntimeError):
    """The enhancer violated the wire contract (bad status, shape, range)."""


class NumericalAbort(RuntimeError):
    """Optimization produced non-finite values and cannot continue."""
