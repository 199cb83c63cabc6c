"""Exception types shared across the package."""


class WicoError(Exception):
    """Base class for every error raised by this package."""

    kind = "error"


class DimensionError(WicoError, ValueError):
    kind = "dimension"


class RangeError(WicoError, ValueError):
    kind = "range"


class DivisibilityError(WicoError, ValueError):
    kind = "divisibility"


class PrecisionError(WicoError, TypeError):
    kind = "precision"


class DivergenceError(WicoError, RuntimeError):
    """Training produced a non-finite loss."""

    kind = "divergence"

    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step
        self.loss = loss


class ConfigError(WicoError, ValueError):
    kind = "config"


class InputError(WicoError, ValueError):
    kind = "input"
