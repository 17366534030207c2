"""Exception types shared across the runtime."""

from __future__ import annotations


class ShapeError(ValueError):
    """Dimension mismatch carrying the offending axis by name."""

    def __init__(self, op: str, axis: str, expected, got, detail: str = ""):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.got = got
        msg = f"{op}: axis '{axis}' expected {expected}, got {got}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GraphModeError(ValueError):
    """Operation applied to a graph in the wrong form (train vs inference)."""


class WeightFileError(ValueError):
    """Malformed, truncated or incompatible weight file."""


class WavReadError(ValueError):
    """Unsupported or corrupt RIFF/WAVE input."""
