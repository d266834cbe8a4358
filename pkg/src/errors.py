"""
Error hierarchy for STCN.

Each error also inherits the closest builtin so callers can catch either the
project type or the generic one.
"""


class STCNError(Exception):
    """Base class for all project errors."""


class ShapeError(STCNError, ValueError):
    """Operand shapes are incompatible; the message names the offending node."""


class UnboundLeafError(STCNError, KeyError):
    """A graph leaf was evaluated without a binding."""

    def __str__(self) -> str:
        # KeyError quotes its argument, which garbles the message
        return str(self.args[0]) if self.args else "unbound leaf"


class NonFiniteError(STCNError, FloatingPointError):
    """A forward value, gradient or ODE state is NaN or infinite."""


class StepBudgetError(STCNError, RuntimeError):
    """An adaptive solver needed more steps than allowed."""


class DatasetFormatError(STCNError, ValueError):
    """Base class for dataset file problems."""


class UnrecognizedFormatError(DatasetFormatError):
    """File does not start with the expected magic bytes."""


class MalformedHeaderError(DatasetFormatError):
    """Header fields are unsupported or impossible."""


class DimensionMismatchError(DatasetFormatError):
    """Header dimensions disagree with the payload or labels."""


class TruncatedPayloadError(DatasetFormatError):
    """Payload is shorter than the header promises."""


class CheckpointFormatError(STCNError, ValueError):
    """Checkpoint file is not a valid parameter archive."""


class DivergenceError(STCNError, RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, stage: str, epoch: int, batch: int, loss: float):
        self.stage = stage
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"{stage} diverged at epoch {epoch}, batch {batch} (loss={loss})"
        )


class MissingArtifactError(STCNError, FileNotFoundError):
    """A checkpoint or dataset required by a command does not exist."""
