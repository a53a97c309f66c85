"""Exception types shared across the package."""


class MaxoutError(Exception):
    """Base class for all errors raised by maxout_rf."""


class InvalidArgumentError(MaxoutError, ValueError):
    """An argument is out of range, has the wrong shape, or is not finite."""


class FormatError(MaxoutError, ValueError):
    """A file does not follow the expected binary or text layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(MaxoutError, ArithmeticError):
    """A factorization failed or an iterative procedure diverged."""


class ConfigError(MaxoutError, ValueError):
    """A config file or value is malformed; carries the line number and field name."""

    def __init__(self, message, line=None, field_name=None, source=None):
        where = [] if source is None else [str(source)]
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field_name = field_name
        self.source = source
