"""Raw audio ingestion and log-mel spectrogram extraction.

Frame-count convention: the signal is reflect-padded by half a window on both
ends and framed every ``hop`` samples, yielding ceil(len / hop) frames. This
reproduces every documented feature size from the documented clip lengths
exactly (5.12 s @ 20/10 ms -> 512 frames, 2.08 s @ 10/5 ms -> 416,
1.023 s @ 5/2 ms -> 512) with no ad-hoc cropping.

Mel scale is HTK (2595 * log10(1 + f/700)) without area normalization; the
filterbank is built on the power spectrum and log-compressed with a fixed
floor. No resampling is performed: inputs must already be at the preset's
sample rate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import WavReadError
from .tensor import Tensor4


@dataclass(frozen=True)
class Waveform:
    """Mono float32 samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if s.size == 0:
            raise ValueError("Waveform: empty sample buffer")
        if self.sample_rate <= 0:
            raise ValueError(f"Waveform: sample_rate must be > 0, got {self.sample_rate}")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelConfig:
    """Spectrogram extraction parameters."""

    sample_rate: int
    window_ms: float
    hop_ms: float
    n_mels: int = 128
    fft_size: Optional[int] = None  # default: next power of two >= window samples
    f_min: float = 0.0
    f_max: Optional[float] = None  # default: sample_rate / 2
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.hop_ms > self.window_ms:
            raise ValueError("MelConfig: hop must not exceed window")
        if self.n_mels < 1:
            raise ValueError("MelConfig: n_mels must be >= 1")
        nyquist = self.sample_rate / 2
        f_max = nyquist if self.f_max is None else self.f_max
        if not (0 <= self.f_min < f_max <= nyquist):
            raise ValueError(f"MelConfig: need 0 <= f_min < f_max <= {nyquist}, got ({self.f_min}, {f_max})")
        object.__setattr__(self, "f_max", f_max)
        win = self.window_samples
        if win < 2:
            raise ValueError("MelConfig: window shorter than 2 samples")
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", 1 << (win - 1).bit_length())
        elif self.fft_size < win:
            raise ValueError("MelConfig: fft_size smaller than the window")

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))


@dataclass(frozen=True)
class Preset:
    """Documented end-to-end input pipeline: rate, framing and clip length."""

    name: str
    sample_rate: int
    window_ms: float
    hop_ms: float
    duration_s: float
    n_mels: int = 128

    def mel_config(self) -> MelConfig:
        return MelConfig(sample_rate=self.sample_rate, window_ms=self.window_ms,
                         hop_ms=self.hop_ms, n_mels=self.n_mels)


PRESETS = {
    "vgg": Preset("vgg", 16000, 20.0, 10.0, 5.12),      # -> 512 x 128
    "epic": Preset("epic", 24000, 10.0, 5.0, 2.08),     # -> 416 x 128
    "ks2": Preset("ks2", 16000, 5.0, 2.0, 1.023),       # -> 512 x 128
    "urban": Preset("urban", 16000, 20.0, 10.0, 4.16),  # -> 416 x 128
}


# ---------------------------------------------------------------------------
# WAV reading
# ---------------------------------------------------------------------------

def read_wav(data: bytes) -> Waveform:
    """Decode a RIFF/WAVE byte string (PCM 16-bit or IEEE float 32-bit).

    Stereo is averaged to mono; 16-bit samples are scaled by 1/32768.
    """
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavReadError("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    declared = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavReadError("truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            declared = size
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None:
        raise WavReadError("missing fmt chunk")
    if payload is None:
        raise WavReadError("missing data chunk")
    if declared == 0:
        raise WavReadError("zero-length data chunk")
    if len(payload) < declared:
        raise WavReadError(f"truncated data chunk: header declares {declared} bytes, file holds {len(payload)}")

    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if channels < 1:
        raise WavReadError("zero channels")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2")
        samples = raw.astype(np.float32) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    else:
        raise WavReadError(f"unsupported codec: format={audio_format}, bits={bits} "
                           "(PCM 16-bit and IEEE float 32-bit supported)")
    if samples.size == 0:
        raise WavReadError("zero-length data chunk")
    if channels > 1:
        usable = (samples.size // channels) * channels
        samples = samples[:usable].reshape(-1, channels).mean(axis=1).astype(np.float32)
    return Waveform(samples=samples, sample_rate=sample_rate)


# ---------------------------------------------------------------------------
# Cropping / padding
# ---------------------------------------------------------------------------

def crop_or_pad(w: Waveform, seconds: float, offset_policy: str = "start",
                seed: Optional[int] = None) -> Waveform:
    """Exact-length clip: zero-pad short inputs at the end, crop long ones.

    ``offset_policy`` is "start" or "random"; random offsets are uniform over
    the valid starts and reproducible through ``seed``.
    """
    if seconds <= 0:
        raise ValueError("crop_or_pad: seconds must be > 0")
    target = int(round(seconds * w.sample_rate))
    n = len(w.samples)
    if n >= target:
        if offset_policy == "start":
            off = 0
        elif offset_policy == "random":
            off = int(np.random.default_rng(seed).integers(0, n - target + 1))
        else:
            raise ValueError(f"crop_or_pad: unknown offset policy {offset_policy!r}")
        clip = w.samples[off:off + target]
    else:
        clip = np.concatenate([w.samples, np.zeros(target - n, dtype=np.float32)])
    return Waveform(samples=clip, sample_rate=w.sample_rate)


# ---------------------------------------------------------------------------
# Log-mel extraction
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular HTK-mel filterbank, shape (n_mels, fft_size // 2 + 1).

    Rows are non-negative. A row whose triangle is too narrow to catch any
    FFT bin falls back to weight 1.0 at the bin nearest its center, so every
    filter keeps at least one non-zero weight at any FFT resolution.
    """
    bins = cfg.fft_size // 2 + 1
    freqs = np.arange(bins, dtype=np.float64) * cfg.sample_rate / cfg.fft_size
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, bins), dtype=np.float64)
    for m in range(cfg.n_mels):
        lo, center, hi = pts[m], pts[m + 1], pts[m + 2]
        rising = (freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not fb[m].any():
            fb[m, int(np.argmin(np.abs(freqs - center)))] = 1.0
    return fb.astype(np.float32)


def _hann(win: int) -> np.ndarray:
    # periodic Hann, the standard STFT analysis window
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)).astype(np.float64)


def stft_power(w: Waveform, cfg: MelConfig) -> np.ndarray:
    """Hann-windowed magnitude-squared spectrogram, shape (frames, bins)."""
    win = cfg.window_samples
    hop = cfg.hop_samples
    n = len(w.samples)
    if n < win:
        raise ValueError(f"stft_power: clip of {n} samples shorter than one window ({win})")
    frames = -(-n // hop)  # ceil(len / hop)
    padded = np.pad(w.samples.astype(np.float64), win // 2, mode="reflect")
    idx = np.arange(frames)[:, None] * hop + np.arange(win)[None, :]
    segs = padded[idx] * _hann(win)
    spec = np.fft.rfft(segs, n=cfg.fft_size, axis=1)
    return (spec.real ** 2 + spec.imag ** 2)


def log_mel(w: Waveform, cfg: MelConfig) -> Tensor4:
    """Log-compressed mel spectrogram as a (1, 1, frames, n_mels) tensor."""
    power = stft_power(w, cfg)
    mel = power @ mel_filterbank(cfg).astype(np.float64).T
    out = np.log(mel + cfg.log_floor).astype(np.float32)
    return Tensor4(out[None, None, :, :])


def extract(w: Waveform, preset: Preset, offset_policy: str = "start",
            seed: Optional[int] = None) -> Tensor4:
    """Full preset pipeline: rate check, crop/pad, then log-mel."""
    if w.sample_rate != preset.sample_rate:
        raise ValueError(
            f"sample rate {w.sample_rate} Hz does not match preset '{preset.name}' "
            f"({preset.sample_rate} Hz); resample offline, the runtime never resamples")
    clip = crop_or_pad(w, preset.duration_s, offset_policy, seed)
    return log_mel(clip, preset.mel_config())
