"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Input dimensions violate a contract (e.g. not divisible by the downsample factor)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class ConfigError(RuntimeError):
    """Invalid or missing configuration (unknown plugin id, missing encoder variant, ...)."""


class EditDivergedError(RuntimeError):
    """Editing loss became non-finite.  Carries the iteration index."""

    def __init__(self, iteration, message=""):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")


class TrainDivergedError(RuntimeError):
    """Training loss became non-finite.  Carries the epoch index."""

    def __init__(self, epoch, message=""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class FormatError(ValueError):
    """Bitstream container violates the format (bad magic, unknown version)."""


class ParseError(FormatError):
    """Truncated or corrupt stream.  Carries the byte offset where parsing failed."""

    def __init__(self, offset, message=""):
        self.offset = offset
        super().__init__(message or f"cannot parse bitstream at offset {offset}")


class RangeOverflowError(ValueError):
    """A cdf table cannot represent the requested symbol range."""


class RateAccountingError(ValueError):
    """A symbol cannot be accounted for under the given tables."""


class ModelMismatchError(RuntimeError):
    """Bitstream was produced under a different decoder than the loaded checkpoint."""


class RangeCoderUnavailable(RuntimeError):
    """The external range coder binary is not built or cannot be found."""
