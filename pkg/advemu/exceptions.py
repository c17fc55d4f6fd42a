class AdvemuError(Exception):
    """Base class for every error raised by advemu."""

    exit_code = 1


class ConfigError(AdvemuError, ValueError):
    """
    Raised when a configuration value is invalid.

    Args:
        message (str): Description of the problem.
        key (str): Dotted key path of the offending entry (e.g. ``grid.nx``).
    """

    exit_code = 2

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class DataError(AdvemuError, ValueError):
    """Raised when data contents cannot be processed."""

    exit_code = 3


class ShapeError(DataError):
    """
    Raised on an array shape mismatch.

    Args:
        message (str): Description of the problem.
        axis (str): Name of the offending axis.
    """

    def __init__(self, message, axis=None):
        self.axis = axis
        if axis is not None:
            message = f"{message} (axis '{axis}')"
        super().__init__(message)


class MissingParamsError(DataError, KeyError):
    """Raised when normalization parameters do not cover a group."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class FormatError(DataError):
    """
    Raised when a binary file does not follow its format.

    Args:
        message (str): Description of the problem.
        offset (int): Byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(message)


class ChecksumError(FormatError):
    """Raised when a file's content does not match its recorded checksum."""


class CheckpointMismatchError(DataError):
    """
    Raised when a checkpoint does not fit the requested model configuration.

    Args:
        mismatches (list[str]): One entry per mismatching key or axis.
    """

    def __init__(self, mismatches):
        self.mismatches = list(mismatches)
        super().__init__("checkpoint does not match configuration: " + "; ".join(self.mismatches))


class NumericError(AdvemuError, ArithmeticError):
    """Raised when a computation meets non-finite or undefined values."""

    exit_code = 4


class CFLError(NumericError):
    """
    Raised when an explicit step would violate the CFL limit.

    Args:
        cfl (float): The measured CFL number.
        limit (float): The allowed maximum.
    """

    def __init__(self, cfl, limit=1.0):
        self.cfl = float(cfl)
        self.limit = float(limit)
        super().__init__(f"CFL number {self.cfl:.6g} exceeds the limit {self.limit:g}")


class NonFiniteLossError(NumericError):
    """
    Raised when training produces a non-finite loss.

    Args:
        loss (float): The offending loss value.
        batch_meta (pandas.DataFrame): Metadata of the samples in the batch.
    """

    def __init__(self, loss, batch_meta):
        self.loss = loss
        self.batch_meta = batch_meta
        super().__init__(f"non-finite loss {loss} in batch:\n{batch_meta.to_string(index=False)}")
