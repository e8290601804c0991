"""Exception types shared across the package.

Every error raised on purpose carries enough structure (op names, shapes,
offsets, step numbers) for a caller to act on it without parsing messages.
"""

from __future__ import annotations


class NdganError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ShapeMismatch(NdganError):
    """An operation received tensors whose shapes do not conform."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes {' vs '.join(str(s) for s in self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(NdganError):
    """An operation was evaluated outside its mathematical domain."""

    def __init__(self, op: str, detail: str):
        self.op = op
        super().__init__(f"{op}: {detail}")


class TapeError(NdganError):
    """Misuse of the differentiation tape (non-scalar output, detached node)."""


class ValidationError(NdganError):
    """Invalid user input: bad config values, missing files, out-of-range labels."""


class SchemaError(ValidationError):
    """A JSON document does not match its documented schema."""

    def __init__(self, path: str, detail: str):
        self.json_path = path
        super().__init__(f"schema violation at {path}: {detail}")


class FormatError(NdganError):
    """A binary or text file does not parse (bad magic, truncation, ragged rows)."""

    def __init__(self, source: str, detail: str, offset: int | None = None):
        self.source = source
        self.offset = offset
        loc = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{source}{loc}: {detail}")


class TrainingDiverged(NdganError):
    """A loss became non-finite during training."""

    def __init__(self, step: int, loss_name: str, value: float):
        self.step = step
        self.loss_name = loss_name
        self.value = value
        super().__init__(f"{loss_name} became non-finite ({value}) at step {step}")


class FrozenModelError(NdganError):
    """Attempted to mutate a model that has been frozen after training."""


class FingerprintMismatch(ValidationError):
    """A scorer was evaluated against a split it was not trained on."""

    def __init__(self, expected: str, actual: str):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"scorer was trained on split {expected[:12]}… but evaluated on {actual[:12]}…"
        )
