"""Torch-checkpoint to ARIN weight-file converter (runtime-independent)."""

from .cli import ConversionError, convert
from .mapping import NameMap, build_name_map, expected_entries
from .torch_model import ArchSpec, AudioRepInceptionNeXt, build_model, calibrate_running_stats

__all__ = [
    "ArchSpec", "AudioRepInceptionNeXt", "ConversionError", "NameMap",
    "build_model", "build_name_map", "calibrate_running_stats", "convert",
    "expected_entries",
]
