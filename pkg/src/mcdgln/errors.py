"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class McdglnError(Exception):
    exit_code = 1


class ConfigError(McdglnError, ValueError):
    exit_code = 2


class DataError(McdglnError, ValueError):
    exit_code = 3


class NumericalError(McdglnError, ArithmeticError):
    exit_code = 4


class CheckpointError(McdglnError):
    exit_code = 5


class ShapeError(McdglnError, ValueError):
    """Operand shapes incompatible for an operation."""

    exit_code = 4

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TapeError(McdglnError, RuntimeError):
    exit_code = 4
