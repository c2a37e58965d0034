"""Exception hierarchy shared by every daan_zsl module."""

from pathlib import Path


class DaanError(Exception):
    """Base class for all errors raised by daan_zsl."""


class ShapeError(DaanError, ValueError):
    """Operands have incompatible shapes."""


class ParameterError(DaanError, ValueError):
    """An operation received an invalid structural parameter."""


class NumericError(DaanError, ArithmeticError):
    """An operation produced or received non-finite values."""

    def __init__(self, op: str, detail: str = "non-finite values") -> None:
        super().__init__(f"{op}: {detail}")
        self.op = op


class ContractError(DaanError, ValueError):
    """A caller violated an operation's pre-condition."""


class ConfigError(DaanError, ValueError):
    """Configuration is invalid or inconsistent."""


class FormatError(DaanError, ValueError):
    """A feature file could not be parsed."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MiningError(DaanError, ValueError):
    """No sample with a different label is available as a negative."""


class GenerationError(DaanError, ValueError):
    """A generated dataset violates the seen/unseen split."""


class DegenerateParameterError(DaanError, ArithmeticError):
    """A parameter group has zero norm, so its optimization rate is undefined."""


class TrainingDivergedError(DaanError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, checkpoint_path: Path | None) -> None:
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
