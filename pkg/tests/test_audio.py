"""WAV decoding, cropping and log-mel extraction."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiorepnext.audio import (
    PRESETS,
    MelConfig,
    Waveform,
    crop_or_pad,
    extract,
    hz_to_mel,
    log_mel,
    mel_filterbank,
    mel_to_hz,
    read_wav,
    stft_power,
)
from audiorepnext.errors import WavReadError


def make_wav(samples, sample_rate=16000, fmt="pcm16", channels=1):
    """Assemble RIFF/WAVE bytes; samples is (n,) or (n, channels) float."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64).T).T
    if samples.ndim == 1:
        samples = samples[:, None]
    if fmt == "pcm16":
        payload = np.clip(samples * 32768.0, -32768, 32767).astype("<i2").tobytes()
        audio_format, bits = 1, 16
    else:
        payload = samples.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    block = channels * bits // 8
    fmt_chunk = struct.pack("<HHIIHH", audio_format, channels, sample_rate,
                            sample_rate * block, block, bits)
    body = b"WAVE"
    body += b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


class TestReadWav:
    def test_pcm16_scale(self):
        data = make_wav(np.array([32767.0 / 32768.0]))
        w = read_wav(data)
        assert w.samples[0] == pytest.approx(0.99996948, abs=1e-8)

    def test_stereo_averages_to_mono(self):
        samples = np.stack([np.full(10, 0.5), np.full(10, -0.5)], axis=1)
        data = make_wav(samples, channels=2)
        w = read_wav(data)
        np.testing.assert_allclose(w.samples, 0.0, atol=1e-4)

    def test_one_second_sample_count(self):
        data = make_wav(np.zeros(16000) + 0.1, sample_rate=16000)
        w = read_wav(data)
        assert len(w) == 16000 and w.sample_rate == 16000

    def test_float32_passthrough(self):
        x = np.linspace(-0.9, 0.9, 37)
        w = read_wav(make_wav(x, fmt="f32"))
        np.testing.assert_allclose(w.samples, x, atol=1e-7)

    def test_not_riff(self):
        with pytest.raises(WavReadError, match="RIFF"):
            read_wav(b"OggS" + b"\x00" * 40)

    def test_unsupported_codec(self):
        data = bytearray(make_wav(np.zeros(8) + 0.5))
        data[20:22] = struct.pack("<H", 7)  # mu-law format tag
        with pytest.raises(WavReadError, match="unsupported codec"):
            read_wav(bytes(data))

    def test_truncated_data_chunk(self):
        data = make_wav(np.zeros(100) + 0.5)
        with pytest.raises(WavReadError, match="truncated"):
            read_wav(data[:-50])

    def test_zero_length_data_chunk(self):
        data = make_wav(np.zeros(4) + 0.5)
        cut = data.index(b"data") + 8
        broken = data[:data.index(b"data") + 4] + struct.pack("<I", 0) + data[cut:cut]
        with pytest.raises(WavReadError, match="zero-length"):
            read_wav(broken)

    def test_missing_fmt(self):
        payload = np.zeros(4, dtype="<i2").tobytes()
        body = b"WAVE" + b"data" + struct.pack("<I", len(payload)) + payload
        with pytest.raises(WavReadError, match="fmt"):
            read_wav(b"RIFF" + struct.pack("<I", len(body)) + body)


class TestCropOrPad:
    def test_crop_start_takes_first_samples(self):
        w = Waveform(samples=np.arange(160000, dtype=np.float32) / 1e6, sample_rate=16000)
        clip = crop_or_pad(w, 5.12, "start")
        assert len(clip) == 81920
        np.testing.assert_array_equal(clip.samples, w.samples[:81920])

    def test_pad_appends_zeros(self):
        w = Waveform(samples=np.ones(16000, dtype=np.float32), sample_rate=16000)
        clip = crop_or_pad(w, 2.08, "start")
        assert len(clip) == 33280
        assert np.all(clip.samples[16000:] == 0)
        assert np.count_nonzero(clip.samples[16000:]) == 0
        assert len(clip) - 16000 == 17280

    def test_random_offset_reproducible(self):
        w = Waveform(samples=np.random.default_rng(0).standard_normal(50000).astype(np.float32),
                     sample_rate=16000)
        a = crop_or_pad(w, 1.0, "random", seed=7)
        b = crop_or_pad(w, 1.0, "random", seed=7)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_bad_policy(self):
        w = Waveform(samples=np.ones(100, dtype=np.float32), sample_rate=100)
        with pytest.raises(ValueError):
            crop_or_pad(w, 0.5, "middle")


class TestLogMel:
    def test_vgg_shape_512x128(self):
        w = Waveform(samples=np.random.default_rng(0).standard_normal(81920).astype(np.float32),
                     sample_rate=16000)
        feat = log_mel(w, PRESETS["vgg"].mel_config())
        assert feat.shape == (1, 1, 512, 128)

    def test_epic_shape_416x128(self):
        w = Waveform(samples=np.random.default_rng(1).standard_normal(49920).astype(np.float32),
                     sample_rate=24000)
        feat = log_mel(w, PRESETS["epic"].mel_config())
        assert feat.shape == (1, 1, 416, 128)

    def test_ks2_shape_512x128(self):
        w = Waveform(samples=np.random.default_rng(2).standard_normal(16368).astype(np.float32),
                     sample_rate=16000)
        feat = log_mel(w, PRESETS["ks2"].mel_config())
        assert feat.shape == (1, 1, 512, 128)

    def test_urban_preset_shape(self):
        rng = np.random.default_rng(3)
        w = Waveform(samples=rng.standard_normal(5 * 16000).astype(np.float32), sample_rate=16000)
        feat = extract(w, PRESETS["urban"])
        assert feat.shape == (1, 1, 416, 128)

    def test_zero_waveform_hits_log_floor(self):
        cfg = MelConfig(sample_rate=16000, window_ms=20, hop_ms=10)
        w = Waveform(samples=np.zeros(16000, dtype=np.float32), sample_rate=16000)
        feat = log_mel(w, cfg)
        np.testing.assert_allclose(feat.data, np.log(cfg.log_floor), rtol=1e-6)

    def test_deterministic_bits(self):
        rng = np.random.default_rng(5)
        w = Waveform(samples=rng.standard_normal(81920).astype(np.float32), sample_rate=16000)
        cfg = PRESETS["vgg"].mel_config()
        a = log_mel(w, cfg)
        b = log_mel(w, cfg)
        np.testing.assert_array_equal(a.data, b.data)

    def test_too_short_clip(self):
        cfg = MelConfig(sample_rate=16000, window_ms=20, hop_ms=10)
        w = Waveform(samples=np.ones(100, dtype=np.float32), sample_rate=16000)
        with pytest.raises(ValueError, match="shorter than one window"):
            log_mel(w, cfg)

    def test_extract_rejects_wrong_rate(self):
        w = Waveform(samples=np.ones(1000, dtype=np.float32), sample_rate=22050)
        with pytest.raises(ValueError, match="resample"):
            extract(w, PRESETS["vgg"])

    def test_frame_count_is_ceil_len_over_hop(self):
        cfg = MelConfig(sample_rate=16000, window_ms=20, hop_ms=10)
        for n in (3205, 16000, 16001, 81920):
            w = Waveform(samples=np.ones(n, dtype=np.float32), sample_rate=16000)
            assert log_mel(w, cfg).h == -(-n // cfg.hop_samples)


class TestMelFilterbank:
    @pytest.mark.parametrize("preset", sorted(PRESETS))
    def test_rows_nonnegative_and_nonempty(self, preset):
        fb = mel_filterbank(PRESETS[preset].mel_config())
        assert np.all(fb >= 0)
        assert np.all((fb > 0).sum(axis=1) >= 1)

    def test_adjacent_triangles_overlap_when_bins_dense(self):
        fb = mel_filterbank(MelConfig(sample_rate=16000, window_ms=128, hop_ms=64, n_mels=40))
        supports = [set(np.flatnonzero(row)) for row in fb]
        for a, b in zip(supports, supports[1:]):
            assert a & b, "adjacent mel triangles must share bins"

    def test_htk_scale_round_trip(self):
        f = np.array([0.0, 700.0, 1000.0, 4000.0, 8000.0])
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, rtol=1e-12)
        assert hz_to_mel(1000.0) == pytest.approx(2595.0 * np.log10(1 + 1000.0 / 700.0))

    def test_coverage_between_fmin_fmax(self):
        cfg = MelConfig(sample_rate=16000, window_ms=64, hop_ms=32, n_mels=32)
        fb = mel_filterbank(cfg)
        covered = fb.sum(axis=0)
        freqs = np.arange(fb.shape[1]) * cfg.sample_rate / cfg.fft_size
        inside = (freqs > 100) & (freqs < cfg.f_max - 100)
        assert np.all(covered[inside] > 0)


class TestSineLeakage:
    def test_energy_concentrates_around_tone(self):
        # 1 kHz at 16 kHz lands exactly on an FFT bin for power-of-two sizes,
        # where a Hann window keeps all energy within the peak bin +-1 (the
        # 2-bin reading caps at 5/6 analytically, see decisions ledger)
        sr, f0 = 16000, 1000.0
        cfg = MelConfig(sample_rate=sr, window_ms=32, hop_ms=16)  # 512-sample window
        t = np.arange(sr) / sr
        w = Waveform(samples=np.sin(2 * np.pi * f0 * t).astype(np.float32), sample_rate=sr)
        power = stft_power(w, cfg)
        frame = power[len(power) // 2]
        k = int(round(f0 * cfg.fft_size / sr))
        neighborhood = frame[k - 1:k + 2].sum()
        assert neighborhood / frame.sum() >= 0.90
        assert int(np.argmax(frame)) == k

    def test_off_bin_tone_two_nearest_bins(self):
        # half-bin offset: >= 90% of energy in the two straddling bins
        sr = 16000
        cfg = MelConfig(sample_rate=sr, window_ms=32, hop_ms=16)
        df = sr / cfg.fft_size
        f0 = (32 + 0.5) * df
        t = np.arange(sr) / sr
        w = Waveform(samples=np.sin(2 * np.pi * f0 * t).astype(np.float32), sample_rate=sr)
        frame = stft_power(w, cfg)[10]
        top2 = np.sort(frame)[-2:].sum()
        assert top2 / frame.sum() >= 0.90


class TestHypothesisProperties:
    @given(n=st.integers(400, 4000), seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_crop_or_pad_total_function(self, n, seed):
        rng = np.random.default_rng(seed)
        w = Waveform(samples=rng.standard_normal(n).astype(np.float32), sample_rate=8000)
        clip = crop_or_pad(w, 0.25, "random", seed=seed)
        assert len(clip) == 2000
        assert clip.sample_rate == 8000

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_spectrogram_shift_determinism(self, seed):
        rng = np.random.default_rng(seed)
        w = Waveform(samples=rng.standard_normal(4000).astype(np.float32), sample_rate=16000)
        cfg = MelConfig(sample_rate=16000, window_ms=20, hop_ms=10)
        np.testing.assert_array_equal(log_mel(w, cfg).data, log_mel(w, cfg).data)
