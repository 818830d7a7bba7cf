"""Exception hierarchy shared by every msct module."""


class MsctError(Exception):
    """Base class for all library errors."""


class ShapeError(MsctError, ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: shape mismatch {rendered}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NumericalError(MsctError, ArithmeticError):
    """A forward op produced NaN or Inf."""

    def __init__(self, op: str, detail: str = "non-finite output"):
        self.op = op
        super().__init__(f"{op}: {detail}")


class ConfigError(MsctError, ValueError):
    """A configuration field is invalid."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class UsageError(MsctError, ValueError):
    """An API was called with arguments that violate its contract."""


class HorizonRangeError(MsctError, IndexError):
    """A requested horizon or anchor lies outside the available range."""


class DatasetError(MsctError, ValueError):
    """A dataset file is malformed; carries row/column context when known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        context = []
        if column is not None:
            context.append(f"column '{column}'")
        if row is not None:
            context.append(f"row {row}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
