"""Source-framework (torch) definition of the AudioRepInceptionNeXt family.

Mirrors the runtime's graph exactly: stem conv+BN (no activation), 3x3/2
max pool with padding 1, four stages of multi-branch blocks (each branch a
bias-free depthwise conv followed by BN, plus a BN identity shortcut),
inverted-bottleneck 1x1 pair with ReLU after the expansion, outer residual,
global average pool and a biased linear head.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

VARIANTS = {
    "b0": dict(channels=(32, 64, 128, 256), depths=(3, 4, 6, 3), expansion=3),
    "b1": dict(channels=(64, 128, 256, 512), depths=(3, 4, 8, 3), expansion=4),
}


@dataclass(frozen=True)
class ArchSpec:
    channels: tuple[int, ...]
    depths: tuple[int, ...]
    expansion: int
    kernels: tuple[int, ...] = (21, 11, 3)
    identity: bool = True
    identity_bn: bool = True
    use_2d: bool = False
    outer_residual: bool = True
    num_classes: int = 309

    @classmethod
    def for_variant(cls, variant: str, num_classes: int = 309) -> "ArchSpec":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r} (expected {sorted(VARIANTS)})")
        return cls(num_classes=num_classes, **VARIANTS[variant])

    def group_labels(self) -> tuple[str, ...]:
        return ("hv",) if self.use_2d else ("h", "v")

    def kernel_shape(self, label: str, k: int) -> tuple[int, int]:
        return {"h": (1, k), "v": (k, 1), "hv": (k, k)}[label]


class Branch(nn.Module):
    def __init__(self, c, kernel):
        super().__init__()
        pad = (kernel[0] // 2, kernel[1] // 2)
        self.conv = nn.Conv2d(c, c, kernel, padding=pad, groups=c, bias=False)
        self.bn = nn.BatchNorm2d(c)

    def forward(self, x):
        return self.bn(self.conv(x))


class Group(nn.Module):
    def __init__(self, c, spec: ArchSpec, label: str):
        super().__init__()
        self.branches = nn.ModuleList(
            Branch(c, spec.kernel_shape(label, k)) for k in spec.kernels)
        self.identity = spec.identity
        self.id_bn = nn.BatchNorm2d(c) if spec.identity and spec.identity_bn else None

    def forward(self, x):
        out = sum(b(x) for b in self.branches)
        if self.identity:
            out = out + (self.id_bn(x) if self.id_bn is not None else x)
        return out


class EncoderBlock(nn.Module):
    def __init__(self, c, spec: ArchSpec):
        super().__init__()
        self.groups = nn.ModuleDict({lbl: Group(c, spec, lbl) for lbl in spec.group_labels()})
        self.expand = nn.Conv2d(c, spec.expansion * c, 1, bias=True)
        self.act = nn.ReLU()
        self.project = nn.Conv2d(spec.expansion * c, c, 1, bias=True)
        self.outer_residual = spec.outer_residual

    def forward(self, x):
        t = x
        for lbl in self.groups:
            t = self.groups[lbl](t)
        t = self.project(self.act(self.expand(t)))
        return t + x if self.outer_residual else t


class Stage(nn.Module):
    def __init__(self, c_in, c_out, depth, spec: ArchSpec, downsample: bool):
        super().__init__()
        self.downsample = nn.Conv2d(c_in, c_out, 1, stride=2, bias=True) if downsample else None
        self.blocks = nn.ModuleList(EncoderBlock(c_out, spec) for _ in range(depth))

    def forward(self, x):
        if self.downsample is not None:
            x = self.downsample(x)
        for blk in self.blocks:
            x = blk(x)
        return x


class AudioRepInceptionNeXt(nn.Module):
    def __init__(self, spec: ArchSpec):
        super().__init__()
        self.spec = spec
        c1 = spec.channels[0]
        self.stem_conv = nn.Conv2d(1, c1, (5, 7), stride=2, padding=(2, 3), bias=False)
        self.stem_bn = nn.BatchNorm2d(c1)
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        stages = []
        prev = c1
        for i, (c, d) in enumerate(zip(spec.channels, spec.depths)):
            stages.append(Stage(prev, c, d, spec, downsample=(i > 0)))
            prev = c
        self.stages = nn.ModuleList(stages)
        self.head = nn.Linear(prev, spec.num_classes, bias=True)

    def forward(self, x):
        t = self.pool(self.stem_bn(self.stem_conv(x)))
        for stage in self.stages:
            t = stage(t)
        t = t.mean(dim=(2, 3))
        return self.head(t)


def build_model(variant: str, num_classes: int = 309) -> AudioRepInceptionNeXt:
    return AudioRepInceptionNeXt(ArchSpec.for_variant(variant, num_classes))


@torch.no_grad()
def calibrate_running_stats(model: nn.Module, batches: int = 20, batch_size: int = 4,
                            shape=(256, 128), seed: int = 0) -> None:
    """Update BN running stats on random inputs so activations stay O(1).

    Freshly initialized BN statistics (var=1) are wildly off for a deep
    residual multi-branch net; a short calibration makes randomly
    initialized checkpoints behave like trained ones scale-wise.
    """
    gen = torch.Generator().manual_seed(seed)
    was_training = model.training
    model.train()
    for _ in range(batches):
        model(torch.randn(batch_size, 1, *shape, generator=gen))
    model.train(was_training)
