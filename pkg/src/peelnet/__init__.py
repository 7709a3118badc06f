"""Peel-by-peel image and video completion with non-local reference attention."""

from .attention import IndexedFeatures, asym_atten_block, attend, gather, scatter_add
from .driver import (
    CompletionOptions,
    EncodedReference,
    FrameSet,
    RunCounters,
    complete_image,
    complete_video,
    encode_reference,
    encode_references,
    one_shot_complete,
    sample_references,
)
from .errors import (
    DegenerateMaskError,
    NoReferenceError,
    NonFiniteLossError,
    NoValidReferenceError,
    RecursionCapError,
    SynthesisError,
)
from .losses import (
    LossBreakdown,
    PerceptualEmbedder,
    gram,
    loss_perceptual,
    loss_pixel,
    loss_total,
    loss_tv,
    total_variation,
)
from .masks import (
    ALL,
    ANY,
    MaskPlane,
    distance_transform,
    downsample_mask,
    erode_schedule,
    get_peel,
)
from .metrics import psnr, ssim
from .network import (
    Checkpoint,
    CompletionNetwork,
    GatedConvLayer,
    LayerSpec,
    NetworkConfig,
    assemble_input,
    gated_conv,
    init_params,
)
from .opnt import pack, read, unpack, write
from .synth import AffineJitter, SceneSampler, TrainSample, synth_sample
from .tensor import ConvSpec, Tensor, grad_check, no_grad
from .training import (
    AdamState,
    TrainingConfig,
    adam_step,
    forward_train,
    make_sampler,
    sample_losses,
    train_loop,
)

__version__ = "0.1.0"

__all__ = [
    "ALL",
    "ANY",
    "AdamState",
    "AffineJitter",
    "Checkpoint",
    "CompletionNetwork",
    "CompletionOptions",
    "ConvSpec",
    "DegenerateMaskError",
    "EncodedReference",
    "FrameSet",
    "GatedConvLayer",
    "IndexedFeatures",
    "LayerSpec",
    "LossBreakdown",
    "MaskPlane",
    "NetworkConfig",
    "NoReferenceError",
    "NoValidReferenceError",
    "NonFiniteLossError",
    "PerceptualEmbedder",
    "RecursionCapError",
    "RunCounters",
    "SceneSampler",
    "SynthesisError",
    "Tensor",
    "TrainSample",
    "TrainingConfig",
    "adam_step",
    "asym_atten_block",
    "assemble_input",
    "attend",
    "complete_image",
    "complete_video",
    "distance_transform",
    "downsample_mask",
    "encode_reference",
    "encode_references",
    "erode_schedule",
    "forward_train",
    "gather",
    "gated_conv",
    "get_peel",
    "grad_check",
    "gram",
    "init_params",
    "loss_perceptual",
    "loss_pixel",
    "loss_total",
    "loss_tv",
    "make_sampler",
    "no_grad",
    "one_shot_complete",
    "pack",
    "psnr",
    "read",
    "sample_losses",
    "sample_references",
    "scatter_add",
    "ssim",
    "synth_sample",
    "total_variation",
    "train_loop",
    "unpack",
    "write",
]
