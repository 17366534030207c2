"""Converter end-to-end: torch checkpoint -> ARIN file -> runtime CLI.

The runtime is exercised strictly through its external interfaces (the ARIN
file format and the ``audiorepnext.cli`` entry point in a subprocess).
"""

import subprocess
import sys

import numpy as np
import pytest
import torch

from arin_converter import (
    ConversionError,
    build_model,
    build_name_map,
    calibrate_running_stats,
    convert,
)
from arin_converter.format import read_file
from arin_converter.torch_model import ArchSpec


def run_arin(*args):
    return subprocess.run([sys.executable, "-m", "audiorepnext.cli", *args],
                          capture_output=True, text=True)


def make_checkpoint(tmp_path, variant, classes, seed=0, calibrate=True):
    torch.manual_seed(seed)
    model = build_model(variant, classes)
    if calibrate:
        calibrate_running_stats(model, batches=20, shape=(128, 64), seed=seed)
    path = tmp_path / f"{variant}.pth"
    torch.save(model.state_dict(), path)
    return model, path


class TestNameMap:
    def test_bijection_over_b1(self, tmp_path):
        model, _ = make_checkpoint(tmp_path, "b1", 309, calibrate=False)
        names = [k for k in model.state_dict() if not k.endswith("num_batches_tracked")]
        nm = build_name_map(ArchSpec.for_variant("b1", 309), names)
        assert nm.unmatched_source == []
        assert nm.unmatched_target == []
        assert nm.matched == len(names)
        assert len({e.target for e in nm.entries}) == nm.matched

    def test_missing_source_lands_in_unmatched_target(self):
        spec = ArchSpec.for_variant("b0", 10)
        nm = build_name_map(spec, ["stem_conv.weight"])
        assert nm.entries[0].target == "stem.conv.weight"
        assert "head.weight" in nm.unmatched_target


class TestConvert:
    def test_b1_file_loads_in_runtime_with_zero_mismatches(self, tmp_path):
        _, ckpt = make_checkpoint(tmp_path, "b1", 309, calibrate=False)
        out = tmp_path / "b1.arin"
        summary = convert(ckpt, "b1", 309, out)
        assert summary["unmatched_source"] == []
        proc = run_arin("flops", "--weights", str(out), "--shape", "512x128")
        assert proc.returncode == 0, proc.stderr
        assert "11.83M" in proc.stdout  # train-form params at 309 classes

    def test_conversion_is_lossless_bytes(self, tmp_path):
        model, ckpt = make_checkpoint(tmp_path, "b0", 7)
        out = tmp_path / "b0.arin"
        convert(ckpt, "b0", 7, out)
        _, tensors = read_file(out)
        state = model.state_dict()
        nm = build_name_map(ArchSpec.for_variant("b0", 7),
                            [k for k in state if not k.endswith("num_batches_tracked")])
        assert len(tensors) == nm.matched
        for entry in nm.entries:
            want = state[entry.source].numpy().astype("<f4", copy=False)
            assert tensors[entry.target].tobytes() == want.tobytes()

    def test_wrong_variant_reports_first_shape(self, tmp_path):
        _, ckpt = make_checkpoint(tmp_path, "b0", 7, calibrate=False)
        with pytest.raises(ConversionError, match=r"shape mismatch.*stem_conv.*32.*64"):
            convert(ckpt, "b1", 7, tmp_path / "x.arin")

    def test_unmatched_target_refused_exhaustively(self, tmp_path):
        model, _ = make_checkpoint(tmp_path, "b0", 7, calibrate=False)
        state = model.state_dict()
        del state["head.bias"]
        del state["stages.2.downsample.bias"]
        path = tmp_path / "partial.pth"
        torch.save(state, path)
        with pytest.raises(ConversionError) as e:
            convert(path, "b0", 7, tmp_path / "x.arin")
        msg = str(e.value)
        assert "head.bias" in msg and "stage3.downsample.bias" in msg

    def test_non_f32_dtype_rejected(self, tmp_path):
        model, _ = make_checkpoint(tmp_path, "b0", 7, calibrate=False)
        state = model.state_dict()
        state["head.bias"] = state["head.bias"].double()
        path = tmp_path / "f64.pth"
        torch.save(state, path)
        with pytest.raises(ConversionError, match="32-bit float"):
            convert(path, "b0", 7, tmp_path / "x.arin")


class TestProbeFixture:
    def test_runtime_logits_match_source_framework(self, tmp_path):
        _, ckpt = make_checkpoint(tmp_path, "b0", 23, seed=3)
        out = tmp_path / "b0.arin"
        summary = convert(ckpt, "b0", 23, out, probe_prefix=str(tmp_path / "probe"),
                          probe_shape=(256, 128), probe_seed=11)
        assert summary["unmatched_source"] == []

        logits_out = tmp_path / "runtime_logits.arin"
        proc = run_arin("infer", "--weights", str(out),
                        "--input", str(tmp_path / "probe.input.arin"),
                        "--logits-out", str(logits_out), "--topk", "1")
        assert proc.returncode == 0, proc.stderr

        _, expected = read_file(tmp_path / "probe.logits.arin")
        _, got = read_file(logits_out)
        diff = np.max(np.abs(expected["logits"] - got["logits"]))
        assert diff < 1e-3, f"cross-runtime logit difference {diff}"

    def test_probe_is_seed_deterministic(self, tmp_path):
        _, ckpt = make_checkpoint(tmp_path, "b0", 5, seed=1)
        a, b = tmp_path / "a.arin", tmp_path / "b.arin"
        convert(ckpt, "b0", 5, a, probe_prefix=str(tmp_path / "p1"), probe_shape=(64, 32), probe_seed=9)
        convert(ckpt, "b0", 5, b, probe_prefix=str(tmp_path / "p2"), probe_shape=(64, 32), probe_seed=9)
        _, x1 = read_file(tmp_path / "p1.input.arin")
        _, x2 = read_file(tmp_path / "p2.input.arin")
        assert x1["spectrogram"].tobytes() == x2["spectrogram"].tobytes()


class TestCli:
    def test_cli_end_to_end(self, tmp_path):
        _, ckpt = make_checkpoint(tmp_path, "b0", 5, calibrate=False)
        out = tmp_path / "out.arin"
        proc = subprocess.run(
            [sys.executable, "-m", "arin_converter.cli", "--checkpoint", str(ckpt),
             "--variant", "b0", "--classes", "5", "--out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert "tensors" in proc.stdout
        assert out.exists()

    def test_cli_error_exit_code(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "arin_converter.cli", "--checkpoint",
             str(tmp_path / "missing.pth"), "--variant", "b0", "--out", str(tmp_path / "x.arin")],
            capture_output=True, text=True)
        assert proc.returncode == 1
        assert "error" in proc.stderr
