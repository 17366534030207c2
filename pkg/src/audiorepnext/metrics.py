"""Analytical cost model and empirical throughput harness.

Cost convention: one multiply-accumulate counts as one FLOP; batch norm,
pooling, activations and elementwise adds are free. This is the convention
that makes a 1-channel-input ResNet50 with a 309-way head come out at
~5.26 GFLOPs for a 512x128 spectrogram, which anchors the published tables.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import MergedGroup, ModelGraph, forward
from .tensor import ConvSpec, Tensor4, conv_output_shape


@dataclass(frozen=True)
class CostReport:
    params: int
    flops: int
    input_shape: tuple[int, int, int, int] | None
    rows: tuple[tuple[str, int, int], ...]  # (layer name, params, flops)

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "flops": self.flops,
            "input_shape": list(self.input_shape) if self.input_shape else None,
            "layers": [{"name": n, "params": p, "flops": f} for n, p, f in self.rows],
        }


@dataclass(frozen=True)
class BenchReport:
    batch_size: int
    warmup_batches: int
    timed_batches: int
    threads: int
    input_shape: tuple[int, int, int, int]
    mode: str
    seed: int
    samples_per_sec: float
    latencies_ms: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "warmup_batches": self.warmup_batches,
            "timed_batches": self.timed_batches,
            "threads": self.threads,
            "input_shape": list(self.input_shape),
            "mode": self.mode,
            "seed": self.seed,
            "samples_per_sec": self.samples_per_sec,
            "latencies_ms": list(self.latencies_ms),
        }


# ---------------------------------------------------------------------------
# Parameter counting
# ---------------------------------------------------------------------------

_RUNNING_STAT_SUFFIXES = (".bn.mean", ".bn.var")


def param_count(g: ModelGraph) -> int:
    """Learnable scalars: weights, biases, BN gamma/beta (not running stats)."""
    total = 0
    for name, arr in g.named_tensors():
        if name.endswith(_RUNNING_STAT_SUFFIXES):
            continue
        total += arr.size
    return total


def conv_params(spec: ConvSpec) -> int:
    return spec.weight.size + (spec.bias.size if spec.bias is not None else 0)


def conv_macs(spec: ConvSpec, in_shape) -> tuple[int, tuple[int, int, int, int]]:
    out_shape = conv_output_shape(in_shape, spec.kernel, spec.stride, spec.padding, spec.c_out)
    n, c_out, oh, ow = out_shape
    kh, kw = spec.kernel
    macs = n * oh * ow * c_out * (spec.c_in // spec.groups) * kh * kw
    return macs, out_shape


# ---------------------------------------------------------------------------
# FLOP accounting (per-graph walk mirroring forward())
# ---------------------------------------------------------------------------

def _pool_out(shape, k, s, p):
    n, c, h, w = shape
    return n, c, (h + 2 * p[0] - k[0]) // s[0] + 1, (w + 2 * p[1] - k[1]) // s[1] + 1


def cost_report(g: ModelGraph, input_shape=(1, 1, 512, 128)) -> CostReport:
    """Exact per-layer parameter and MAC breakdown at the given input shape."""
    n, c, h, w = input_shape
    if h % 32 or w % 32:
        raise ShapeError("cost_report", "h" if h % 32 else "w", "a multiple of 32", (h, w))
    if c != g.config.in_channels:
        raise ShapeError("cost_report", "c", g.config.in_channels, c)

    rows: list[tuple[str, int, int]] = []

    def conv_row(name, spec, shape, extra_params=0):
        macs, out = conv_macs(spec, shape)
        rows.append((name, conv_params(spec) + extra_params, macs))
        return out

    bn_params = lambda ch: 2 * ch  # gamma + beta; running stats not learnable

    shape = input_shape
    shape = conv_row("stem", g.stem.conv, shape,
                     extra_params=bn_params(g.stem.conv.c_out) if g.stem.bn is not None else 0)
    shape = _pool_out(shape, g.config.pool_kernel, g.config.pool_stride, g.config.pool_padding)
    rows.append(("maxpool", 0, 0))

    for i, stage in enumerate(g.stages, start=1):
        if stage.downsample is not None:
            shape = conv_row(f"stage{i}.downsample", stage.downsample, shape)
        for j, blk in enumerate(stage.blocks, start=1):
            base = f"stage{i}.block{j}"
            for grp in blk.groups:
                gname = "hv" if grp.orientation == "2d" else grp.orientation
                if isinstance(grp, MergedGroup):
                    shape = conv_row(f"{base}.{gname}.merged", grp.conv, shape)
                else:
                    p = f = 0
                    for conv, _bn in grp.branches:
                        macs, out = conv_macs(conv, shape)
                        p += conv_params(conv) + bn_params(conv.c_out)
                        f += macs
                    if grp.identity_bn is not None:
                        p += bn_params(grp.channels)
                    shape = out
                    rows.append((f"{base}.{gname}", p, f))
            shape = conv_row(f"{base}.expand", blk.expand, shape)
            shape = conv_row(f"{base}.project", blk.project, shape)

    head_params = g.head_weight.size + g.head_bias.size
    head_macs = n * g.head_weight.size
    rows.append(("head", head_params, head_macs))

    return CostReport(
        params=sum(p for _, p, _ in rows),
        flops=sum(f for _, _, f in rows),
        input_shape=tuple(input_shape),
        rows=tuple(rows),
    )


def flops(g: ModelGraph, input_shape=(1, 1, 512, 128)) -> int:
    return cost_report(g, input_shape).flops


# ---------------------------------------------------------------------------
# ResNet50-shape reference (validates the MAC = FLOP convention)
# ---------------------------------------------------------------------------

def resnet50_reference_cost(input_hw=(512, 128), num_classes=309, in_channels=1) -> CostReport:
    """Cost of a standard ResNet50 shape (v1.5 bottlenecks, BN after each conv)
    on a single-channel spectrogram, under the same MAC = FLOP convention."""
    h, w = input_hw
    rows: list[tuple[str, int, int]] = []

    def conv(name, c_in, c_out, k, s, shape):
        hh, ww = shape
        oh = (hh + 2 * (k // 2) - k) // s + 1
        ow = (ww + 2 * (k // 2) - k) // s + 1
        params = c_out * c_in * k * k + 2 * c_out  # conv (no bias) + BN gamma/beta
        macs = oh * ow * c_out * c_in * k * k
        rows.append((name, params, macs))
        return oh, ow

    shape = conv("conv1", in_channels, 64, 7, 2, (h, w))
    shape = ((shape[0] + 2 - 3) // 2 + 1, (shape[1] + 2 - 3) // 2 + 1)  # maxpool 3/2/1
    rows.append(("maxpool", 0, 0))

    c_in = 64
    stage_cfg = ((64, 256, 3, 1), (128, 512, 4, 2), (256, 1024, 6, 2), (512, 2048, 3, 2))
    for idx, (mid, out, blocks, stride) in enumerate(stage_cfg, start=1):
        for b in range(blocks):
            s = stride if b == 0 else 1
            name = f"layer{idx}.{b}"
            shape_in = shape
            shape = conv(f"{name}.conv1", c_in, mid, 1, 1, shape)
            shape = conv(f"{name}.conv2", mid, mid, 3, s, shape)
            shape = conv(f"{name}.conv3", mid, out, 1, 1, shape)
            if b == 0:
                conv(f"{name}.downsample", c_in, out, 1, s, shape_in)
            c_in = out

    rows.append(("fc", 2048 * num_classes + num_classes, 2048 * num_classes))
    return CostReport(
        params=sum(p for _, p, _ in rows),
        flops=sum(f for _, _, f in rows),
        input_shape=(1, in_channels, h, w),
        rows=tuple(rows),
    )


# ---------------------------------------------------------------------------
# Throughput harness
# ---------------------------------------------------------------------------

def bench(g: ModelGraph, input_shape=(1, 1, 512, 128), batch: int = 8,
          warmup: int = 50, timed: int = 50, threads: int = 1,
          seed: int = 0) -> BenchReport:
    """Timed forward passes on one fixed random batch, warmup excluded.

    Thread count is enforced for the BLAS pools during the run; batch
    outputs are discarded (no correctness checking inside the timing loop).
    """
    if timed < 1:
        raise ValueError("bench: timed batches must be >= 1")
    from threadpoolctl import threadpool_limits

    _, c, h, w = input_shape
    rng = np.random.default_rng(seed)
    x = Tensor4.from_array(rng.standard_normal((batch, c, h, w)))

    latencies: list[float] = []
    with threadpool_limits(limits=threads):
        for _ in range(warmup):
            forward(g, x)
        for _ in range(timed):
            t0 = time.perf_counter()
            forward(g, x)
            latencies.append((time.perf_counter() - t0) * 1e3)

    total_s = sum(latencies) / 1e3
    return BenchReport(
        batch_size=batch,
        warmup_batches=warmup,
        timed_batches=timed,
        threads=threads,
        input_shape=(batch, c, h, w),
        mode=g.mode,
        seed=seed,
        samples_per_sec=batch * timed / total_s,
        latencies_ms=tuple(latencies),
    )


def write_report(report, path) -> None:
    """Serialize a Bench/CostReport as a standalone JSON document."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
