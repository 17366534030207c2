"""Rank-4 tensors and the handful of NN primitives the architecture needs.

Layout is batch x channel x time x frequency (NCHW with w fastest). All
operations are pure: inputs are never modified and identical inputs produce
bit-identical outputs. Convolution follows the cross-correlation convention
(no kernel flip) so converted checkpoints need no flipping.

Arithmetic runs in the dtype of the activation tensor: float32 by default,
float64 when the caller feeds a float64 Tensor4 (the high-precision option
used by the equivalence suite). Weights are always stored as float32 and are
cast up on the fly when needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

_ALLOWED_DTYPES = (np.float32, np.float64)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Tensor4:
    """Dense rank-4 activation array, immutable after construction."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 4:
            raise ShapeError("Tensor4", "ndim", 4, d.ndim)
        if min(d.shape) < 1:
            raise ShapeError("Tensor4", "shape", "all dims >= 1", d.shape)
        if d.dtype.type not in _ALLOWED_DTYPES:
            raise TypeError(f"Tensor4 requires float32/float64 data, got {d.dtype}")
        object.__setattr__(self, "data", _freeze(d))

    @classmethod
    def from_array(cls, a, dtype=np.float32) -> "Tensor4":
        return cls(np.asarray(a, dtype=dtype))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype) -> "Tensor4":
        return Tensor4(self.data.astype(dtype))


@dataclass(frozen=True)
class ConvSpec:
    """Convolution parameters: weight (c_out, c_in/groups, k_h, k_w)."""

    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float32)
        if w.ndim != 4:
            raise ShapeError("ConvSpec", "weight.ndim", 4, w.ndim)
        if self.groups < 1:
            raise ValueError(f"ConvSpec: groups must be positive, got {self.groups}")
        if w.shape[0] % self.groups != 0:
            raise ShapeError("ConvSpec", "c_out", f"divisible by groups={self.groups}", w.shape[0])
        object.__setattr__(self, "weight", _freeze(w))
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float32)
            if b.shape != (w.shape[0],):
                raise ShapeError("ConvSpec", "bias", (w.shape[0],), b.shape)
            object.__setattr__(self, "bias", _freeze(b))

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.c_in == self.c_out


@dataclass(frozen=True)
class BnSpec:
    """Inference-mode batch norm: running mean/var plus learned scale/bias."""

    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        vecs = {}
        for name in ("mean", "var", "gamma", "beta"):
            v = np.asarray(getattr(self, name), dtype=np.float32).reshape(-1)
            vecs[name] = v
        n = len(vecs["mean"])
        for name, v in vecs.items():
            if len(v) != n:
                raise ShapeError("BnSpec", name, n, len(v))
            object.__setattr__(self, name, _freeze(v))
        if self.eps <= 0:
            raise ValueError(f"BnSpec: eps must be > 0, got {self.eps}")
        if np.any(self.var < 0):
            raise ValueError("BnSpec: variance must be >= 0 elementwise")

    @property
    def channels(self) -> int:
        return len(self.mean)

    @property
    def sigma(self) -> np.ndarray:
        """Denominator sqrt(var + eps) used by the affine transform."""
        return np.sqrt(self.var.astype(np.float64) + self.eps).astype(np.float32)


def _out_extent(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def conv_output_shape(shape, kernel, stride, padding, c_out) -> tuple[int, int, int, int]:
    n, _, h, w = shape
    oh = _out_extent(h, kernel[0], stride[0], padding[0])
    ow = _out_extent(w, kernel[1], stride[1], padding[1])
    return n, c_out, oh, ow


def _windows(x: np.ndarray, kernel, stride, padding, fill=0.0) -> np.ndarray:
    """Strided sliding windows of a padded NCHW array: (n, c, oh, ow, kh, kw)."""
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=fill)
    if x.shape[2] < kh or x.shape[3] < kw:
        axis = "h" if x.shape[2] < kh else "w"
        raise ShapeError("conv2d/pool", axis, f">= kernel {kernel}", x.shape[2:])
    v = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return v[:, :, ::sh, ::sw]


def _conv_pointwise(x: np.ndarray, w: np.ndarray, stride) -> np.ndarray:
    # 1x1 kernel: plain channel mixing, one GEMM per batch
    xs = x[:, :, ::stride[0], ::stride[1]]
    n, c, h, wid = xs.shape
    flat = xs.reshape(n, c, h * wid)
    out = np.matmul(w[:, :, 0, 0], flat)
    return out.reshape(n, w.shape[0], h, wid)


def _conv_depthwise_unit_stride(x: np.ndarray, w: np.ndarray, padding) -> np.ndarray:
    # per-channel kernel as k_h*k_w shifted fused multiply-adds
    ph, pw = padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    n, c, h, wid = x.shape
    kh, kw = w.shape[2], w.shape[3]
    if h < kh or wid < kw:
        axis = "h" if h < kh else "w"
        raise ShapeError("conv2d/pool", axis, f">= kernel {(kh, kw)}", (h, wid))
    oh, ow = h - kh + 1, wid - kw + 1
    out = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            out += w[None, :, 0, u, v, None, None] * x[:, :, u:u + oh, v:v + ow]
    return out


def conv2d(x: Tensor4, spec: ConvSpec) -> Tensor4:
    """2-D cross-correlation with zero padding.

    Output spatial extent is floor((size + 2p - k)/s) + 1 per axis. All code
    paths compute the same direct convolution; 1x1 and stride-1 depthwise
    kernels take shortcuts that skip the window materialization.
    """
    if x.c != spec.c_in:
        raise ShapeError("conv2d", "c", spec.c_in, x.c, "input channels vs kernel")
    w = spec.weight.astype(x.dtype, copy=False)
    if spec.kernel == (1, 1) and spec.groups == 1 and spec.padding == (0, 0):
        out = _conv_pointwise(x.data, w, spec.stride)
    elif spec.is_depthwise and spec.stride == (1, 1):
        out = _conv_depthwise_unit_stride(x.data, w, spec.padding)
    else:
        win = _windows(x.data, spec.kernel, spec.stride, spec.padding)
        if spec.groups == 1:
            out = np.einsum("nihwkl,oikl->nohw", win, w, optimize=True)
        elif spec.is_depthwise:
            out = np.einsum("nchwkl,ckl->nchw", win, w[:, 0], optimize=True)
        else:
            cpg_in = spec.c_in // spec.groups
            cpg_out = spec.c_out // spec.groups
            parts = []
            for g in range(spec.groups):
                wg = w[g * cpg_out:(g + 1) * cpg_out]
                xg = win[:, g * cpg_in:(g + 1) * cpg_in]
                parts.append(np.einsum("nihwkl,oikl->nohw", xg, wg, optimize=True))
            out = np.concatenate(parts, axis=1)
    if spec.bias is not None:
        out = out + spec.bias.astype(x.dtype, copy=False)[None, :, None, None]
    return Tensor4(np.ascontiguousarray(out, dtype=x.dtype))


def batch_norm(x: Tensor4, bn: BnSpec) -> Tensor4:
    """Per-channel affine (x - mean) * gamma / sqrt(var + eps) + beta."""
    if x.c != bn.channels:
        raise ShapeError("batch_norm", "c", bn.channels, x.c)
    dt = x.dtype
    scale = (bn.gamma.astype(dt) / bn.sigma.astype(dt))[None, :, None, None]
    shift = bn.beta.astype(dt)[None, :, None, None] - bn.mean.astype(dt)[None, :, None, None] * scale
    return Tensor4((x.data * scale + shift).astype(dt, copy=False))


def max_pool2d(x: Tensor4, k: tuple[int, int], s: tuple[int, int], p: tuple[int, int]) -> Tensor4:
    """Max pooling; padding cells count as -inf."""
    win = _windows(x.data, k, s, p, fill=-np.inf)
    out = win.max(axis=(4, 5))
    return Tensor4(np.ascontiguousarray(out, dtype=x.dtype))


def relu(x: Tensor4) -> Tensor4:
    return Tensor4(np.maximum(x.data, 0))


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.shape != b.shape:
        raise ShapeError("add", "shape", a.shape, b.shape)
    return Tensor4(a.data + b.data)


def global_avg_pool(x: Tensor4) -> Tensor4:
    """Mean over the two spatial axes; output is (n, c, 1, 1)."""
    return Tensor4(x.data.mean(axis=(2, 3), keepdims=True).astype(x.dtype, copy=False))


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Affine map of flattened features: (n, f) @ (out, f).T + bias."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError("linear", "ndim", 2, x.ndim)
    if x.shape[1] != weight.shape[1]:
        raise ShapeError("linear", "features", weight.shape[1], x.shape[1])
    out = x @ weight.astype(x.dtype, copy=False).T
    if bias is not None:
        out = out + bias.astype(x.dtype, copy=False)
    return out
