"""Checkpoint conversion entry point.

Translates a torch checkpoint of AudioRepInceptionNeXt into the runtime's
ARIN weight format (train form, BN running statistics carried through).
Tensors are never transformed beyond little-endian float32 layout
normalization; any convention mismatch belongs in the runtime, not here.

``--probe PREFIX`` additionally writes a validation fixture: a seeded random
input and the logits the source framework computes for it, for cross-runtime
comparison through the runtime CLI (``arin infer --logits-out``).
"""

from __future__ import annotations

import argparse
import sys

import torch

from .format import write_model, write_tensors
from .mapping import build_name_map, runtime_config_dict
from .torch_model import ArchSpec, build_model

_IGNORED_SUFFIX = ".num_batches_tracked"  # BN step counter, not a parameter


class ConversionError(ValueError):
    pass


def load_state_dict(path) -> dict:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    for key in ("state_dict", "model_state", "model"):
        if isinstance(blob, dict) and key in blob and isinstance(blob[key], dict):
            blob = blob[key]
    if not isinstance(blob, dict) or not all(isinstance(v, torch.Tensor) for v in blob.values()):
        raise ConversionError(f"{path}: not a flat tensor state dict")
    return {k: v for k, v in blob.items() if not k.endswith(_IGNORED_SUFFIX)}


def convert(checkpoint_path, variant: str, num_classes: int, out_path,
            probe_prefix=None, probe_shape=(512, 128), probe_seed: int = 0) -> dict:
    """Convert one checkpoint; returns a summary dict."""
    spec = ArchSpec.for_variant(variant, num_classes)
    state = load_state_dict(checkpoint_path)
    name_map = build_name_map(spec, state.keys())

    # shape errors first: a wrong --variant shows up as the first mismatched
    # shape rather than as a wall of structurally-absent names
    tensors = []
    for entry in name_map.entries:
        t = state[entry.source]
        if t.dtype != torch.float32:
            raise ConversionError(f"{entry.source}: dtype {t.dtype} is not 32-bit float")
        if tuple(t.shape) != entry.shape:
            raise ConversionError(
                f"shape mismatch for {entry.source} -> {entry.target}: checkpoint has "
                f"{tuple(t.shape)}, variant '{variant}' expects {entry.shape} (wrong --variant?)")
        tensors.append((entry.target, t.numpy()))

    if name_map.unmatched_target:
        missing = ", ".join(name_map.unmatched_target)
        raise ConversionError(
            f"checkpoint does not cover the target graph; unmatched target parameters: {missing}")

    payload_bytes = write_model(out_path, runtime_config_dict(spec, variant), "train", tensors)
    summary = {
        "tensors": len(tensors),
        "payload_bytes": payload_bytes,
        "unmatched_source": name_map.unmatched_source,
    }

    if probe_prefix is not None:
        model = build_model(variant, num_classes)
        model.load_state_dict({k: v for k, v in state.items()}, strict=True)
        model.eval()
        gen = torch.Generator().manual_seed(probe_seed)
        x = torch.randn(1, 1, *probe_shape, generator=gen)
        with torch.no_grad():
            logits = model(x)
        write_tensors(f"{probe_prefix}.input.arin", {"spectrogram": x.numpy()},
                      meta={"probe_seed": probe_seed})
        write_tensors(f"{probe_prefix}.logits.arin", {"logits": logits.numpy()},
                      meta={"probe_seed": probe_seed})
        summary["probe"] = [f"{probe_prefix}.input.arin", f"{probe_prefix}.logits.arin"]

    return summary


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="arin-convert", description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--variant", choices=("b0", "b1"), required=True)
    ap.add_argument("--classes", type=int, default=309)
    ap.add_argument("--out", required=True)
    ap.add_argument("--probe", help="prefix for the validation fixture files")
    ap.add_argument("--probe-shape", default="512x128")
    ap.add_argument("--probe-seed", type=int, default=0)
    args = ap.parse_args(argv)

    shape = tuple(int(v) for v in args.probe_shape.split("x"))
    try:
        summary = convert(args.checkpoint, args.variant, args.classes, args.out,
                          probe_prefix=args.probe, probe_shape=shape, probe_seed=args.probe_seed)
    except (ConversionError, FileNotFoundError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}: {summary['tensors']} tensors, {summary['payload_bytes']:,} payload bytes")
    if summary["unmatched_source"]:
        print("unmatched source tensors (ignored): " + ", ".join(summary["unmatched_source"]))
    for p in summary.get("probe", []):
        print(f"wrote {p}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
