from __future__ import annotations


class LtcError(Exception):
    """Base class for errors raised by ltc-rerank."""


class ShapeError(LtcError, ValueError):
    """Operand shapes are incompatible with the requested kernel."""


class ConfigurationError(LtcError, ValueError):
    """A model, compression or training configuration is invalid."""


class InputError(LtcError, ValueError):
    """Token input cannot be fed to the model."""


class ArgumentError(LtcError, ValueError):
    """A function argument is outside its valid range."""


class DataFormatError(LtcError, ValueError):
    """A data file does not parse. Carries the file and the 1-based line number."""

    def __init__(self, message: str, path: str | None = None, line_number: int | None = None):
        self.path = path
        self.line_number = line_number
        location = ""
        if path is not None:
            location = f"{path}:{line_number}: " if line_number is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class DivergenceError(LtcError, ArithmeticError):
    """Training produced a non-finite loss."""


class SweepCellError(LtcError, RuntimeError):
    """A (target layer, rate) sweep cell failed."""

    def __init__(self, target_layer: int, rate: float, message: str):
        self.target_layer = target_layer
        self.rate = rate
        super().__init__(f"Sweep cell (target_layer={target_layer}, rate={rate}) failed: {message}")
