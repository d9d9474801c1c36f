"""Exception hierarchy shared by the library and the CLI."""


class PPMError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(PPMError):
    exit_code = 2


class DataError(PPMError):
    exit_code = 3


class SchemaError(DataError):
    pass


class RowError(DataError):
    """Raised when too many input rows could not be parsed.

    ``rows`` holds ``(line_number, message)`` pairs for every rejected row.
    """

    def __init__(self, rows):
        self.rows = list(rows)
        preview = "; ".join(f"line {ln}: {msg}" for ln, msg in self.rows[:5])
        more = f" (+{len(self.rows) - 5} more)" if len(self.rows) > 5 else ""
        super().__init__(f"{len(self.rows)} malformed row(s): {preview}{more}")


class EmptySplitError(DataError):
    pass


class NumericError(PPMError):
    exit_code = 4


class NonFiniteError(NumericError):
    pass


class DimensionError(PPMError, ValueError):
    pass


class TapeError(PPMError, RuntimeError):
    pass


class UndefinedMetricError(PPMError, ValueError):
    pass
