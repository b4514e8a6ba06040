"""Exception hierarchy shared by all oddsift modules.

Every error raised on a documented failure path derives from
:class:`OddsiftError`, so callers (and the CLI) can distinguish domain
failures (exit code 1) from genuine bugs.
"""


class OddsiftError(Exception):
    """Base class for all domain errors."""


class NotFoundError(OddsiftError):
    """A referenced file, record id, or session component does not exist."""


class DecodeError(OddsiftError):
    """Stored bytes could not be decoded into an image."""


class TruncationError(DecodeError):
    """A data region ended before the declared number of bytes."""


class FormatError(OddsiftError):
    """Input violates a file-format or channel-count contract."""


class MalformedHeaderError(FormatError):
    """A structured header is missing mandatory fields or markers."""


class UnsupportedShapeError(FormatError):
    """Data has a dimensionality this reader does not support."""


class InvalidDataError(OddsiftError):
    """Numeric input is unusable (NaN/Inf where finite values are required)."""


class ParseError(OddsiftError):
    """A text row could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(OddsiftError):
    """Invalid configuration value or unknown enum kind."""


class ContractError(OddsiftError):
    """A call violated an operation's pre/post contract (e.g. shape mismatch)."""


class UsageError(OddsiftError):
    """API misuse, e.g. backward before forward."""


class SamplerError(OddsiftError):
    """The labelled set cannot support class-balanced sampling."""


class TrainingError(OddsiftError):
    """Training aborted (non-finite loss or gradients); carries diagnostics."""


class MetricError(OddsiftError):
    """A metric is undefined for the given table (e.g. single-class)."""


class IntegrityError(OddsiftError):
    """Stored data is inconsistent: duplicate ids, missing footer, overlap."""
