"""Lossless conversion of the multi-branch train form into the merged form.

Three linear rewrites compose into the whole transformation:

* ``fold_bn``      absorbs an inference-mode batch norm into the preceding
                   convolution, producing a biased kernel.
* ``pad_to``       embeds a small kernel center-aligned inside a larger
                   zero kernel; with "same" padding the convolution result
                   is unchanged.
* ``merge_group``  folds every branch of a group, pads all kernels to the
                   largest one and sums weights and biases; the identity
                   shortcut enters as a (BN-folded) Dirac kernel.

``reparameterize`` applies these to every block plus the stem BN and returns
a new inference-form graph whose forward agrees with the original within
floating-point reassociation error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import GraphModeError, ShapeError
from .model import INFERENCE, TRAIN, BranchGroup, MergedGroup, ModelGraph, Stem
from .tensor import BnSpec, ConvSpec


@dataclass(frozen=True)
class FusedKernel:
    """Depthwise weight plus bias produced by folding/merging."""

    weight: np.ndarray  # (c, 1, k_h, k_w)
    bias: np.ndarray  # (c,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float32)
        b = np.asarray(self.bias, dtype=np.float32)
        if w.ndim != 4 or w.shape[1] != 1:
            raise ShapeError("FusedKernel", "weight", "(c, 1, k_h, k_w)", w.shape)
        if b.shape != (w.shape[0],):
            raise ShapeError("FusedKernel", "bias", (w.shape[0],), b.shape)
        if not np.all(np.isfinite(b)) or not np.all(np.isfinite(w)):
            raise ValueError("FusedKernel: non-finite values")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]


def fold_bn(conv: ConvSpec, bn: BnSpec) -> FusedKernel:
    """Fold BN(conv(x)) into conv(x) + bias.

    Per output channel j: w_j <- (gamma_j / sigma_j) * w_j and
    b_j = beta_j - mu_j * gamma_j / sigma_j, sigma = sqrt(var + eps).
    """
    if conv.bias is not None:
        raise ValueError("fold_bn: branch convolutions must be bias-free")
    if conv.c_out != bn.channels:
        raise ShapeError("fold_bn", "c", conv.c_out, bn.channels)
    scale = (bn.gamma.astype(np.float64) / bn.sigma.astype(np.float64))
    weight = conv.weight.astype(np.float64) * scale[:, None, None, None]
    bias = bn.beta.astype(np.float64) - bn.mean.astype(np.float64) * scale
    return FusedKernel(weight=weight.astype(np.float32), bias=bias.astype(np.float32))


def pad_to(kernel: FusedKernel, target: tuple[int, int]) -> FusedKernel:
    """Zero-embed the kernel center-aligned inside a ``target``-sized kernel."""
    kh, kw = kernel.kernel
    th, tw = target
    if th < kh or tw < kw:
        raise ShapeError("pad_to", "target", f">= {kernel.kernel}", target)
    if (th - kh) % 2 or (tw - kw) % 2:
        raise ValueError(f"pad_to: parity mismatch, cannot center {kernel.kernel} inside {target}")
    if (th, tw) == (kh, kw):
        return kernel
    dh, dw = (th - kh) // 2, (tw - kw) // 2
    out = np.zeros((kernel.channels, 1, th, tw), dtype=np.float32)
    out[:, :, dh:dh + kh, dw:dw + kw] = kernel.weight
    return FusedKernel(weight=out, bias=kernel.bias)


def identity_kernel(channels: int, target: tuple[int, int]) -> FusedKernel:
    """Depthwise Dirac: 1.0 at the center of each channel's own filter."""
    th, tw = target
    if th % 2 == 0 or tw % 2 == 0:
        raise ValueError(f"identity_kernel: even target {target} has no center")
    w = np.zeros((channels, 1, th, tw), dtype=np.float32)
    w[:, 0, th // 2, tw // 2] = 1.0
    return FusedKernel(weight=w, bias=np.zeros(channels, dtype=np.float32))


def merge_group(group: BranchGroup) -> FusedKernel:
    """Collapse a branch group into a single biased depthwise kernel.

    Every branch is BN-folded, zero-padded to the largest kernel and summed
    (weights and biases alike). The identity shortcut contributes a Dirac
    kernel, BN-folded first when the group normalizes its identity.
    """
    target = max((conv.kernel for conv, _ in group.branches), key=lambda k: k[0] * k[1])
    weight = np.zeros((group.channels, 1, *target), dtype=np.float64)
    bias = np.zeros(group.channels, dtype=np.float64)
    for conv, bn in group.branches:
        fused = pad_to(fold_bn(conv, bn), target)
        weight += fused.weight
        bias += fused.bias
    if group.has_identity:
        dirac = identity_kernel(group.channels, target)
        if group.identity_bn is not None:
            ident_conv = ConvSpec(weight=dirac.weight, stride=(1, 1),
                                  padding=(target[0] // 2, target[1] // 2), groups=group.channels)
            dirac = fold_bn(ident_conv, group.identity_bn)
        weight += dirac.weight
        bias += dirac.bias
    return FusedKernel(weight=weight.astype(np.float32), bias=bias.astype(np.float32))


def _merged_conv(group: BranchGroup) -> MergedGroup:
    fused = merge_group(group)
    kh, kw = fused.kernel
    conv = ConvSpec(weight=fused.weight, bias=fused.bias, stride=(1, 1),
                    padding=(kh // 2, kw // 2), groups=fused.channels)
    return MergedGroup(orientation=group.orientation, conv=conv)


def _fold_stem(stem: Stem) -> Stem:
    if stem.bn is None:
        return stem
    fused = fold_bn(stem.conv, stem.bn)
    conv = replace(stem.conv, weight=fused.weight, bias=fused.bias)
    return Stem(conv=conv, bn=None)


def reparameterize(g: ModelGraph) -> ModelGraph:
    """Return the inference-form twin of a train-form graph."""
    if g.mode != TRAIN:
        raise GraphModeError("reparameterize: graph is already in inference form")
    stages = []
    for stage in g.stages:
        blocks = []
        for blk in stage.blocks:
            groups = tuple(
                _merged_conv(grp) if isinstance(grp, BranchGroup) else grp
                for grp in blk.groups
            )
            blocks.append(replace(blk, groups=groups))
        stages.append(replace(stage, blocks=tuple(blocks)))
    return ModelGraph(
        config=g.config,
        mode=INFERENCE,
        stem=_fold_stem(g.stem),
        stages=tuple(stages),
        head_weight=g.head_weight,
        head_bias=g.head_bias,
    )


def verify_equivalence(train_graph: ModelGraph, inference_graph: ModelGraph,
                       n_inputs: int = 8, spatial: tuple[int, int] = (64, 32),
                       seed: int = 0) -> float:
    """Max absolute logit difference between the two forms on random inputs."""
    from .model import forward
    from .tensor import Tensor4

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_inputs):
        x = Tensor4.from_array(rng.standard_normal((1, train_graph.config.in_channels, *spatial)))
        a = forward(train_graph, x)
        b = forward(inference_graph, x)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst
