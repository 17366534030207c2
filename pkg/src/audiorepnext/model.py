"""AudioRepInceptionNeXt graph construction and forward pass.

The graph exists in two forms. The train form keeps every block as two
parallel multi-scale depthwise branch groups (1xk then kx1, each branch
followed by batch norm, plus an identity shortcut inside the group) feeding
an inverted-bottleneck pair of 1x1 convolutions. The inference form is the
mathematically equivalent single-branch network produced by
:mod:`audiorepnext.reparam`.

Variant builders reproduce the published cost figures:

* ``b1``: stage channels (64, 128, 256, 512), depths (3, 4, 8, 3), expansion 4
  -> 11.83M params train / 11.65M inference, 2.56 GFLOPs at 512x128.
* ``b0``: stage channels (32, 64, 128, 256), depths (3, 4, 6, 3), expansion 3
  -> 2.18M / 2.10M params, 0.47 GFLOPs at 512x128.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

from .errors import GraphModeError, ShapeError
from .tensor import BnSpec, ConvSpec, Tensor4, add, batch_norm, conv2d, global_avg_pool, linear, max_pool2d, relu

TRAIN = "train"
INFERENCE = "inference"

_GROUP_AXES = {"h": "horizontal", "v": "vertical", "2d": "2d"}


# ---------------------------------------------------------------------------
# Declarative configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockConfig:
    """Declarative description of one encoder block."""

    channels: int
    expansion_ratio: int = 4
    kernel_sizes: tuple[int, ...] = (21, 11, 3)
    has_identity: bool = True
    identity_bn: bool = True
    use_2d_branches: bool = False
    outer_residual: bool = True

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("BlockConfig: channels must be >= 1")
        if self.expansion_ratio < 1:
            raise ValueError("BlockConfig: expansion_ratio must be >= 1")
        ks = tuple(int(k) for k in self.kernel_sizes)
        if not ks:
            raise ValueError("BlockConfig: at least one branch kernel required")
        if any(k % 2 == 0 or k < 1 for k in ks):
            raise ValueError(f"BlockConfig: kernel sizes must be odd and positive, got {ks}")
        if list(ks) != sorted(ks, reverse=True) or len(set(ks)) != len(ks):
            raise ValueError(f"BlockConfig: kernel sizes must be strictly descending, got {ks}")
        object.__setattr__(self, "kernel_sizes", ks)


@dataclass(frozen=True)
class StageConfig:
    channels: int
    depth: int
    downsample: bool
    block: BlockConfig


@dataclass(frozen=True)
class ModelConfig:
    """Whole-network description: stem, pooling, four stages, head."""

    variant: str
    stages: tuple[StageConfig, ...]
    num_classes: int
    stem_kernel: tuple[int, int] = (5, 7)
    stem_stride: tuple[int, int] = (2, 2)
    pool_kernel: tuple[int, int] = (3, 3)
    pool_stride: tuple[int, int] = (2, 2)
    pool_padding: tuple[int, int] = (1, 1)
    in_channels: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("ModelConfig: num_classes must be >= 1")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"ModelConfig: unknown activation {self.activation!r}")
        if not self.stages:
            raise ValueError("ModelConfig: at least one stage required")
        for k in (*self.stem_kernel, *self.pool_kernel):
            if k < 1:
                raise ValueError("ModelConfig: zero-size kernels not allowed")

    @property
    def stem_channels(self) -> int:
        return self.stages[0].channels

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "activation": self.activation,
            "stem": {"kernel": list(self.stem_kernel), "stride": list(self.stem_stride)},
            "pool": {
                "kernel": list(self.pool_kernel),
                "stride": list(self.pool_stride),
                "padding": list(self.pool_padding),
            },
            "stages": [
                {
                    "channels": s.channels,
                    "depth": s.depth,
                    "downsample": s.downsample,
                    "expansion_ratio": s.block.expansion_ratio,
                    "kernel_sizes": list(s.block.kernel_sizes),
                    "has_identity": s.block.has_identity,
                    "identity_bn": s.block.identity_bn,
                    "use_2d_branches": s.block.use_2d_branches,
                    "outer_residual": s.block.outer_residual,
                }
                for s in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        stages = tuple(
            StageConfig(
                channels=s["channels"],
                depth=s["depth"],
                downsample=s["downsample"],
                block=BlockConfig(
                    channels=s["channels"],
                    expansion_ratio=s["expansion_ratio"],
                    kernel_sizes=tuple(s["kernel_sizes"]),
                    has_identity=s["has_identity"],
                    identity_bn=s["identity_bn"],
                    use_2d_branches=s["use_2d_branches"],
                    outer_residual=s["outer_residual"],
                ),
            )
            for s in d["stages"]
        )
        return cls(
            variant=d["variant"],
            stages=stages,
            num_classes=d["num_classes"],
            stem_kernel=tuple(d["stem"]["kernel"]),
            stem_stride=tuple(d["stem"]["stride"]),
            pool_kernel=tuple(d["pool"]["kernel"]),
            pool_stride=tuple(d["pool"]["stride"]),
            pool_padding=tuple(d["pool"]["padding"]),
            in_channels=d.get("in_channels", 1),
            activation=d.get("activation", "relu"),
        )


def _make_config(variant: str, channels, depths, expansion, num_classes, block_overrides=None) -> ModelConfig:
    overrides = block_overrides or {}
    stages = []
    for i, (c, d) in enumerate(zip(channels, depths)):
        blk = BlockConfig(channels=c, expansion_ratio=expansion, **overrides)
        stages.append(StageConfig(channels=c, depth=d, downsample=(i > 0), block=blk))
    return ModelConfig(variant=variant, stages=tuple(stages), num_classes=num_classes)


def b0_config(num_classes: int = 309, **block_overrides) -> ModelConfig:
    return _make_config("b0", (32, 64, 128, 256), (3, 4, 6, 3), 3, num_classes, block_overrides)


def b1_config(num_classes: int = 309, **block_overrides) -> ModelConfig:
    return _make_config("b1", (64, 128, 256, 512), (3, 4, 8, 3), 4, num_classes, block_overrides)


def variant_config(variant: str, num_classes: int = 309, **block_overrides) -> ModelConfig:
    if variant == "b0":
        return b0_config(num_classes, **block_overrides)
    if variant == "b1":
        return b1_config(num_classes, **block_overrides)
    raise ValueError(f"unknown variant {variant!r} (expected 'b0' or 'b1')")


_ABLATIONS = {
    "s1": dict(kernel_sizes=(3,)),
    "s2": dict(kernel_sizes=(11,)),
    "s3": dict(kernel_sizes=(21,)),
    "s4": dict(kernel_sizes=(21, 3)),
    "s5": dict(kernel_sizes=(21, 11)),
    "s6": dict(kernel_sizes=(21, 11, 3)),
    "s7": dict(kernel_sizes=(31, 21, 11, 3)),
    "s8": dict(kernel_sizes=(21, 11, 3), has_identity=False),
    "s9": dict(kernel_sizes=(21, 11, 3), expansion=1),
}


def ablation_config(structure_id: str, num_classes: int = 309) -> ModelConfig:
    """Multi-branch ablation structures s1..s9 on the b1 base."""
    if structure_id not in _ABLATIONS:
        raise ValueError(f"unknown ablation structure {structure_id!r} (expected s1..s9)")
    row = dict(_ABLATIONS[structure_id])
    expansion = row.pop("expansion", 4)
    cfg = _make_config(f"custom:{structure_id}", (64, 128, 256, 512), (3, 4, 8, 3), expansion, num_classes, row)
    return cfg


# ---------------------------------------------------------------------------
# Runtime graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BranchGroup:
    """Parallel depthwise branches of one orientation, summed after BN."""

    orientation: str  # "h" (1xk), "v" (kx1) or "2d" (kxk)
    branches: tuple[tuple[ConvSpec, BnSpec], ...]  # descending kernel size
    has_identity: bool = True
    identity_bn: Optional[BnSpec] = None

    def __post_init__(self):
        if self.orientation not in _GROUP_AXES:
            raise ValueError(f"BranchGroup: bad orientation {self.orientation!r}")
        if not self.branches:
            raise ValueError("BranchGroup: needs at least one branch")
        c = self.branches[0][0].c_out
        sizes = []
        for conv, bn in self.branches:
            if conv.stride != (1, 1):
                raise ValueError("BranchGroup: all branches must share stride (1, 1)")
            if not conv.is_depthwise:
                raise ValueError("BranchGroup: branches must be depthwise")
            if conv.c_out != c or bn.channels != c:
                raise ShapeError("BranchGroup", "c", c, (conv.c_out, bn.channels))
            if conv.bias is not None:
                raise ValueError("BranchGroup: branch convs are bias-free (BN supplies the affine)")
            kh, kw = conv.kernel
            if kh % 2 == 0 or kw % 2 == 0:
                raise ValueError(f"BranchGroup: even kernel {conv.kernel} has no center")
            if conv.padding != (kh // 2, kw // 2):
                raise ValueError("BranchGroup: branches must use 'same' padding")
            sizes.append(max(kh, kw))
        if sizes != sorted(sizes, reverse=True):
            raise ValueError(f"BranchGroup: kernels must descend, got {sizes}")
        if self.identity_bn is not None and not self.has_identity:
            raise ValueError("BranchGroup: identity_bn given without identity branch")

    @property
    def channels(self) -> int:
        return self.branches[0][0].c_out

    @property
    def kernel_sizes(self) -> tuple[int, ...]:
        return tuple(max(conv.kernel) for conv, _ in self.branches)

    def forward(self, x: Tensor4) -> Tensor4:
        out = None
        for conv, bn in self.branches:
            y = batch_norm(conv2d(x, conv), bn)
            out = y if out is None else add(out, y)
        if self.has_identity:
            y = batch_norm(x, self.identity_bn) if self.identity_bn is not None else x
            out = add(out, y)
        return out


@dataclass(frozen=True)
class MergedGroup:
    """Reparameterized group: one biased depthwise conv of the largest kernel."""

    orientation: str
    conv: ConvSpec

    def __post_init__(self):
        if self.orientation not in _GROUP_AXES:
            raise ValueError(f"MergedGroup: bad orientation {self.orientation!r}")
        if self.conv.bias is None:
            raise ValueError("MergedGroup: merged conv must carry a bias")

    @property
    def channels(self) -> int:
        return self.conv.c_out

    def forward(self, x: Tensor4) -> Tensor4:
        return conv2d(x, self.conv)


Group = Union[BranchGroup, MergedGroup]


@dataclass(frozen=True)
class Block:
    """Branch group(s) followed by the inverted-bottleneck 1x1 pair."""

    groups: tuple[Group, ...]
    expand: ConvSpec
    project: ConvSpec
    outer_residual: bool = True
    activation: str = "relu"

    def forward(self, x: Tensor4) -> Tensor4:
        t = x
        for g in self.groups:
            t = g.forward(t)
        t = conv2d(t, self.expand)
        if self.activation == "relu":
            t = relu(t)
        t = conv2d(t, self.project)
        return add(t, x) if self.outer_residual else t


@dataclass(frozen=True)
class Stem:
    conv: ConvSpec
    bn: Optional[BnSpec]

    def forward(self, x: Tensor4) -> Tensor4:
        y = conv2d(x, self.conv)
        return batch_norm(y, self.bn) if self.bn is not None else y


@dataclass(frozen=True)
class Stage:
    downsample: Optional[ConvSpec]
    blocks: tuple[Block, ...]


@dataclass(frozen=True)
class ModelGraph:
    """Immutable, fully parameterized network in train or inference form."""

    config: ModelConfig
    mode: str
    stem: Stem
    stages: tuple[Stage, ...]
    head_weight: np.ndarray
    head_bias: np.ndarray

    def __post_init__(self):
        if self.mode not in (TRAIN, INFERENCE):
            raise ValueError(f"ModelGraph: bad mode {self.mode!r}")
        if self.mode == INFERENCE:
            if self.stem.bn is not None:
                raise GraphModeError("inference-form graph must not contain a stem BN")
            for st in self.stages:
                for blk in st.blocks:
                    if any(isinstance(g, BranchGroup) for g in blk.groups):
                        raise GraphModeError("inference-form graph must not contain branch groups")
        names = [n for n, _ in self.named_tensors()]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"ModelGraph: duplicate parameter names {dupes}")
        hw = np.asarray(self.head_weight, dtype=np.float32)
        hb = np.asarray(self.head_bias, dtype=np.float32)
        hw.flags.writeable = False
        hb.flags.writeable = False
        object.__setattr__(self, "head_weight", hw)
        object.__setattr__(self, "head_bias", hb)

    # -- tensor walk -------------------------------------------------------

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """All stored tensors (weights, biases and BN stats) in graph order."""

        def bn_items(prefix: str, bn: BnSpec):
            yield f"{prefix}.gamma", bn.gamma
            yield f"{prefix}.beta", bn.beta
            yield f"{prefix}.mean", bn.mean
            yield f"{prefix}.var", bn.var

        def conv_items(prefix: str, conv: ConvSpec):
            yield f"{prefix}.weight", conv.weight
            if conv.bias is not None:
                yield f"{prefix}.bias", conv.bias

        yield from conv_items("stem.conv", self.stem.conv)
        if self.stem.bn is not None:
            yield from bn_items("stem.bn", self.stem.bn)
        for i, stage in enumerate(self.stages, start=1):
            if stage.downsample is not None:
                yield from conv_items(f"stage{i}.downsample", stage.downsample)
            for j, blk in enumerate(stage.blocks, start=1):
                base = f"stage{i}.block{j}"
                for g in blk.groups:
                    gname = "hv" if g.orientation == "2d" else g.orientation
                    if isinstance(g, MergedGroup):
                        yield from conv_items(f"{base}.{gname}.merged", g.conv)
                    else:
                        for conv, bn in g.branches:
                            k = max(conv.kernel)
                            yield from conv_items(f"{base}.{gname}.k{k}", conv)
                            yield from bn_items(f"{base}.{gname}.k{k}.bn", bn)
                        if g.identity_bn is not None:
                            yield from bn_items(f"{base}.{gname}.identity.bn", g.identity_bn)
                yield from conv_items(f"{base}.expand", blk.expand)
                yield from conv_items(f"{base}.project", blk.project)
        yield "head.weight", self.head_weight
        yield "head.bias", self.head_bias


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

class _RandomInit:
    """He-uniform conv weights, zero biases, calibrated BN statistics.

    Running variances are initialized to the analytic second moment of the
    preceding He-initialized layer's output (2x its input variance) rather
    than 1, which is what one calibration pass on unit-variance inputs would
    converge to. Without this, 20 residually-stacked random blocks amplify
    activations by orders of magnitude and absolute equivalence tolerances
    stop being meaningful.
    """

    def __init__(self, rng: Optional[np.random.Generator]):
        self.rng = rng

    def weight(self, name: str, shape, fan_in: int) -> np.ndarray:
        if self.rng is None:
            return np.zeros(shape, dtype=np.float32)
        bound = np.sqrt(6.0 / fan_in)
        return self.rng.uniform(-bound, bound, size=shape).astype(np.float32)

    def bias(self, name: str, n: int) -> np.ndarray:
        return np.zeros(n, dtype=np.float32)

    def bn(self, prefix: str, c: int, var: float = 1.0) -> BnSpec:
        return BnSpec(mean=np.zeros(c), var=np.full(c, var), gamma=np.ones(c), beta=np.zeros(c))


class _TensorInit:
    """Pulls parameters by name from a mapping (used by the weight loader)."""

    def __init__(self, tensors):
        self.tensors = tensors
        self.consumed: set[str] = set()

    def _take(self, name: str, shape) -> np.ndarray:
        if name not in self.tensors:
            raise KeyError(name)
        a = np.asarray(self.tensors[name], dtype=np.float32)
        if tuple(a.shape) != tuple(shape):
            raise ShapeError("load", name, tuple(shape), tuple(a.shape))
        self.consumed.add(name)
        return a

    def weight(self, name: str, shape, fan_in: int) -> np.ndarray:
        return self._take(name, shape)

    def bias(self, name: str, n: int) -> np.ndarray:
        return self._take(name, (n,))

    def bn(self, prefix: str, c: int, var: float = 1.0) -> BnSpec:
        return BnSpec(
            gamma=self._take(f"{prefix}.gamma", (c,)),
            beta=self._take(f"{prefix}.beta", (c,)),
            mean=self._take(f"{prefix}.mean", (c,)),
            var=self._take(f"{prefix}.var", (c,)),
        )


def _same_dw_conv(c: int, kernel: tuple[int, int], init, name: str) -> ConvSpec:
    kh, kw = kernel
    w = init.weight(f"{name}.weight", (c, 1, kh, kw), kh * kw)
    return ConvSpec(weight=w, stride=(1, 1), padding=(kh // 2, kw // 2), groups=c)


def _pointwise(c_in: int, c_out: int, init, name: str, stride=(1, 1)) -> ConvSpec:
    w = init.weight(f"{name}.weight", (c_out, c_in, 1, 1), c_in)
    b = init.bias(f"{name}.bias", c_out)
    return ConvSpec(weight=w, bias=b, stride=stride, padding=(0, 0))


def _branch_kernel(orientation: str, k: int) -> tuple[int, int]:
    if orientation == "h":
        return (1, k)
    if orientation == "v":
        return (k, 1)
    return (k, k)


def _group_label(orientation: str) -> str:
    return "hv" if orientation == "2d" else orientation


def _build_group(orientation: str, cfg: BlockConfig, init, base: str, v_in: float) -> tuple[BranchGroup, float]:
    g = f"{base}.{_group_label(orientation)}"
    branches = tuple(
        (
            _same_dw_conv(cfg.channels, _branch_kernel(orientation, k), init, f"{g}.k{k}"),
            init.bn(f"{g}.k{k}.bn", cfg.channels, var=2.0 * v_in),
        )
        for k in cfg.kernel_sizes
    )
    v_out = float(len(cfg.kernel_sizes))  # each BN-normalized branch is ~unit variance
    id_bn = None
    if cfg.has_identity:
        if cfg.identity_bn:
            id_bn = init.bn(f"{g}.identity.bn", cfg.channels, var=v_in)
            v_out += 1.0
        else:
            v_out += v_in
    return BranchGroup(orientation=orientation, branches=branches,
                       has_identity=cfg.has_identity, identity_bn=id_bn), v_out


def _build_merged_group(orientation: str, cfg: BlockConfig, init, base: str) -> MergedGroup:
    g = f"{base}.{_group_label(orientation)}.merged"
    kh, kw = _branch_kernel(orientation, max(cfg.kernel_sizes))
    w = init.weight(f"{g}.weight", (cfg.channels, 1, kh, kw), kh * kw)
    b = init.bias(f"{g}.bias", cfg.channels)
    conv = ConvSpec(weight=w, bias=b, stride=(1, 1), padding=(kh // 2, kw // 2), groups=cfg.channels)
    return MergedGroup(orientation=orientation, conv=conv)


def _build_block(cfg: BlockConfig, mode: str, activation: str, init, base: str,
                 v_in: float) -> tuple[Block, float]:
    orientations = ("2d",) if cfg.use_2d_branches else ("h", "v")
    v = v_in
    if mode == TRAIN:
        groups = []
        for o in orientations:
            grp, v = _build_group(o, cfg, init, base, v)
            groups.append(grp)
        groups = tuple(groups)
    else:
        groups = tuple(_build_merged_group(o, cfg, init, base) for o in orientations)
        v = v_in * (2.0 ** len(orientations))  # He-init merged convs double variance
    v *= 2.0  # expand
    if activation == "relu":
        v *= 0.5
    v *= 2.0  # project
    v_out = v + v_in if cfg.outer_residual else v
    c, e = cfg.channels, cfg.expansion_ratio
    return Block(
        groups=groups,
        expand=_pointwise(c, e * c, init, f"{base}.expand"),
        project=_pointwise(e * c, c, init, f"{base}.project"),
        outer_residual=cfg.outer_residual,
        activation=activation,
    ), v_out


def _construct(config: ModelConfig, mode: str, init) -> ModelGraph:
    kh, kw = config.stem_kernel
    c1 = config.stem_channels
    stem_w = init.weight("stem.conv.weight", (c1, config.in_channels, kh, kw),
                         config.in_channels * kh * kw)
    v = 1.0  # tracked activation variance under unit-variance input
    if mode == TRAIN:
        stem = Stem(
            conv=ConvSpec(weight=stem_w, stride=config.stem_stride, padding=(kh // 2, kw // 2)),
            bn=init.bn("stem.bn", c1, var=2.0),
        )
    else:
        stem = Stem(
            conv=ConvSpec(weight=stem_w, bias=init.bias("stem.conv.bias", c1),
                          stride=config.stem_stride, padding=(kh // 2, kw // 2)),
            bn=None,
        )
        v = 2.0

    stages = []
    prev_c = c1
    for i, sc in enumerate(config.stages, start=1):
        down = None
        if sc.downsample:
            down = _pointwise(prev_c, sc.channels, init, f"stage{i}.downsample", stride=(2, 2))
            v *= 2.0
        blocks = []
        for j in range(1, sc.depth + 1):
            blk, v = _build_block(sc.block, mode, config.activation, init, f"stage{i}.block{j}", v)
            blocks.append(blk)
        stages.append(Stage(downsample=down, blocks=tuple(blocks)))
        prev_c = sc.channels

    head_w = init.weight("head.weight", (config.num_classes, prev_c), prev_c)
    head_b = init.bias("head.bias", config.num_classes)
    return ModelGraph(config=config, mode=mode, stem=stem, stages=tuple(stages),
                      head_weight=head_w, head_bias=head_b)


def build(config: ModelConfig, mode: str = TRAIN, seed: Optional[int] = None) -> ModelGraph:
    """Materialize a graph; He-uniform conv init from ``seed``, zeros if None."""
    if mode not in (TRAIN, INFERENCE):
        raise ValueError(f"build: mode must be '{TRAIN}' or '{INFERENCE}', got {mode!r}")
    rng = np.random.default_rng(seed) if seed is not None else None
    return _construct(config, mode, _RandomInit(rng))


def build_from_tensors(config: ModelConfig, mode: str, tensors) -> ModelGraph:
    """Rebuild a graph from a name -> array mapping (weight-file loading).

    Raises KeyError naming the first parameter the mapping lacks; unused
    mapping entries raise ValueError listing the leftovers.
    """
    init = _TensorInit(tensors)
    g = _construct(config, mode, init)
    extra = sorted(set(tensors) - init.consumed)
    if extra:
        raise ValueError(f"unused tensors not part of the graph: {extra[:5]}"
                         + ("..." if len(extra) > 5 else ""))
    return g


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def forward(g: ModelGraph, x: Tensor4) -> np.ndarray:
    """Run the network on a batch of spectrograms; returns raw logits (n, classes)."""
    if x.c != g.config.in_channels:
        raise ShapeError("forward", "c", g.config.in_channels, x.c)
    if x.h % 32 != 0 or x.w % 32 != 0:
        axis = "h" if x.h % 32 else "w"
        raise ShapeError(
            "forward", axis, "a multiple of 32", (x.h, x.w),
            "pad or crop the spectrogram in the audio front-end so both spatial axes divide by 32",
        )
    t = g.stem.forward(x)
    t = max_pool2d(t, g.config.pool_kernel, g.config.pool_stride, g.config.pool_padding)
    for stage in g.stages:
        if stage.downsample is not None:
            t = conv2d(t, stage.downsample)
        for blk in stage.blocks:
            t = blk.forward(t)
    pooled = global_avg_pool(t)
    feats = pooled.data.reshape(pooled.n, pooled.c)
    return linear(feats, g.head_weight, g.head_bias)
