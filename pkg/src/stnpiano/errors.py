"""Exception and warning types shared across the package."""

from __future__ import annotations


class InvalidArgumentError(ValueError):
    """A precondition on an argument was violated."""


class WavFormatError(ValueError):
    """Malformed or unsupported WAV data.

    ``offset`` is the byte position in the file where parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class EstimationError(RuntimeError):
    """An analysis estimate could not be produced."""


class MissingPartialError(EstimationError):
    def __init__(self, m: int, level_db: float | None = None):
        msg = f"missing partial m={m}"
        if level_db is not None:
            msg += f" (peak {level_db:.1f} dBFS)"
        super().__init__(msg)
        self.m = m


class DivergenceError(RuntimeError):
    """Optimisation loss exploded past the allowed factor of its initial value."""

    def __init__(self, stage: str, epoch: int, loss: float, initial: float):
        super().__init__(
            f"stage {stage} diverged at epoch {epoch}: loss {loss:.6g} "
            f"vs initial {initial:.6g}"
        )
        self.stage = stage
        self.epoch = epoch
        self.loss = loss
        self.initial = initial


class ModelLoadError(ValueError):
    """A stored model file is malformed; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SilentTargetWarning(UserWarning):
    pass


class NonFiniteWarning(UserWarning):
    pass
