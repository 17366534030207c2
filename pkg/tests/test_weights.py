"""Weight-file format: round trips and corruption handling."""

import json
import struct

import numpy as np
import pytest

from audiorepnext.errors import WeightFileError
from audiorepnext.model import INFERENCE, b0_config, build, forward
from audiorepnext.reparam import reparameterize
from audiorepnext.tensor import Tensor4
from audiorepnext.weights import MAGIC, VERSION, load, load_tensors, save, save_tensors

HEADER_PREFIX = struct.Struct("<4sIQ")


def read_header(path):
    data = path.read_bytes()
    magic, version, hlen = HEADER_PREFIX.unpack_from(data, 0)
    header = json.loads(data[HEADER_PREFIX.size:HEADER_PREFIX.size + hlen])
    return data, header, HEADER_PREFIX.size + hlen


def rewrite(path, header, payload):
    raw = json.dumps(header, sort_keys=True).encode()
    raw += b" " * (-len(raw) % 4)
    path.write_bytes(HEADER_PREFIX.pack(MAGIC, VERSION, len(raw)) + raw + payload)


class TestModelRoundTrip:
    def test_bit_exact_forward(self, tmp_path):
        g = build(b0_config(num_classes=9), seed=5)
        p = tmp_path / "b0.arin"
        save(g, p)
        g2 = load(p)
        x = Tensor4.from_array(np.random.default_rng(0).standard_normal((1, 1, 64, 32)))
        np.testing.assert_array_equal(forward(g, x), forward(g2, x))

    def test_bit_exact_tensors(self, tmp_path):
        g = build(b0_config(num_classes=9), seed=5)
        p = tmp_path / "b0.arin"
        save(g, p)
        g2 = load(p)
        for (na, ta), (nb, tb) in zip(g.named_tensors(), g2.named_tensors()):
            assert na == nb
            assert ta.tobytes() == tb.tobytes()

    def test_inference_form_round_trip(self, tmp_path):
        g = reparameterize(build(b0_config(num_classes=4), seed=1))
        p = tmp_path / "inf.arin"
        save(g, p)
        g2 = load(p)
        assert g2.mode == INFERENCE
        x = Tensor4.from_array(np.random.default_rng(2).standard_normal((1, 1, 64, 32)))
        np.testing.assert_array_equal(forward(g, x), forward(g2, x))

    def test_save_load_save_identical_bytes(self, tmp_path):
        g = build(b0_config(num_classes=4), seed=1)
        p1, p2 = tmp_path / "a.arin", tmp_path / "b.arin"
        save(g, p1)
        save(load(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        g = build(b0_config(num_classes=2), seed=0)
        p = tmp_path / "w.arin"
        save(g, p)
        data = bytearray(p.read_bytes())
        data[0:4] = b"NOPE"
        p.write_bytes(bytes(data))
        with pytest.raises(WeightFileError, match="not a weight file"):
            load(p)

    def test_newer_version_refused(self, tmp_path):
        g = build(b0_config(num_classes=2), seed=0)
        p = tmp_path / "w.arin"
        save(g, p)
        data = bytearray(p.read_bytes())
        struct.pack_into("<I", data, 4, VERSION + 1)
        p.write_bytes(bytes(data))
        with pytest.raises(WeightFileError, match="version"):
            load(p)

    def test_tensor_past_eof_names_tensor(self, tmp_path):
        g = build(b0_config(num_classes=2), seed=0)
        p = tmp_path / "w.arin"
        save(g, p)
        data, header, payload_at = read_header(p)
        rewrite(p, header, data[payload_at:-64])  # drop the payload tail
        last = header["tensors"][-1]["name"]
        with pytest.raises(WeightFileError, match="past end of file"):
            load(p)

    def test_missing_manifest_entry_reports_first_name(self, tmp_path):
        g = build(b0_config(num_classes=2), seed=0)
        p = tmp_path / "w.arin"
        save(g, p)
        data, header, payload_at = read_header(p)
        removed = header["tensors"].pop(3)
        rewrite(p, header, data[payload_at:])
        with pytest.raises(WeightFileError, match=removed["name"]):
            load(p)

    def test_misaligned_offset(self, tmp_path):
        g = build(b0_config(num_classes=2), seed=0)
        p = tmp_path / "w.arin"
        save(g, p)
        data, header, payload_at = read_header(p)
        header["tensors"][0]["byte_offset"] += 2
        rewrite(p, header, data[payload_at:] + b"\x00\x00")
        with pytest.raises(WeightFileError, match="misaligned"):
            load(p)

    def test_overlapping_tensors(self, tmp_path):
        g = build(b0_config(num_classes=2), seed=0)
        p = tmp_path / "w.arin"
        save(g, p)
        data, header, payload_at = read_header(p)
        header["tensors"][1]["byte_offset"] = header["tensors"][0]["byte_offset"]
        rewrite(p, header, data[payload_at:])
        with pytest.raises(WeightFileError, match="overlap"):
            load(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "w.arin"
        p.write_bytes(HEADER_PREFIX.pack(MAGIC, VERSION, 4096) + b"{}")
        with pytest.raises(WeightFileError, match="truncated header"):
            load(p)

    def test_random_bytes(self, tmp_path):
        p = tmp_path / "w.arin"
        p.write_bytes(b"\x01\x02")
        with pytest.raises(WeightFileError):
            load(p)


class TestTensorContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "spectrogram": rng.standard_normal((1, 1, 64, 128)).astype(np.float32),
            "logits": rng.standard_normal((1, 10)).astype(np.float32),
        }
        p = tmp_path / "t.arin"
        save_tensors(p, tensors, meta={"note": "fixture"})
        out = load_tensors(p)
        assert sorted(out) == ["logits", "spectrogram"]
        for k in tensors:
            np.testing.assert_array_equal(out[k], tensors[k])

    def test_kind_mismatch(self, tmp_path):
        g = build(b0_config(num_classes=2), seed=0)
        p = tmp_path / "w.arin"
        save(g, p)
        with pytest.raises(WeightFileError, match="tensor container"):
            load_tensors(p)
        p2 = tmp_path / "t.arin"
        save_tensors(p2, {"x": np.zeros(3, dtype=np.float32)})
        with pytest.raises(WeightFileError, match="model"):
            load(p2)

    def test_payload_alignment(self, tmp_path):
        p = tmp_path / "t.arin"
        save_tensors(p, {"x": np.zeros(3, dtype=np.float32)})
        data = p.read_bytes()
        _, _, hlen = HEADER_PREFIX.unpack_from(data, 0)
        assert (HEADER_PREFIX.size + hlen) % 4 == 0
