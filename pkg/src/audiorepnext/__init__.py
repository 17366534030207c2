"""AudioRepInceptionNeXt inference runtime.

Builds the multi-branch train-form graph, converts it into the equivalent
single-branch inference form (BN folding + zero-padded kernel merging), and
verifies the equivalence, cost and speed properties end to end from raw
audio to class logits.
"""

from .errors import GraphModeError, ShapeError, WavReadError, WeightFileError
from .model import (
    INFERENCE,
    TRAIN,
    BlockConfig,
    ModelConfig,
    ModelGraph,
    StageConfig,
    ablation_config,
    b0_config,
    b1_config,
    build,
    forward,
    variant_config,
)
from .reparam import FusedKernel, fold_bn, merge_group, pad_to, reparameterize
from .tensor import BnSpec, ConvSpec, Tensor4

__version__ = "0.1.0"

__all__ = [
    "BlockConfig", "BnSpec", "ConvSpec", "FusedKernel", "GraphModeError",
    "INFERENCE", "ModelConfig", "ModelGraph", "ShapeError", "StageConfig",
    "TRAIN", "Tensor4", "WavReadError", "WeightFileError", "ablation_config",
    "b0_config", "b1_config", "build", "fold_bn", "forward", "merge_group",
    "pad_to", "reparameterize", "variant_config",
]
