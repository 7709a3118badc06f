"""Peel-by-peel completion: reference sampling, one-time reference encoding,
the per-frame fill loop, and the one-shot ablation path.

Geometry (peels, erosion, composition) runs at the frame's native resolution.
Network inputs are padded to a multiple of 4 and outputs cropped back, so the
recursion count never depends on padding.  Composition uses a hard select per
pixel, which keeps everything outside the current peel bit-identical to the
input.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .attention import asym_atten_block
from .errors import (
    DegenerateMaskError,
    NoReferenceError,
    NoValidReferenceError,
    RecursionCapError,
)
from .masks import ALL, ANY, MaskPlane, downsample_mask, erode_schedule, get_peel
from .network import CompletionNetwork
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

SCALE = 4  # encoder downsampling factor


@dataclass
class CompletionOptions:
    peel_width: int = 8
    ref_stride: int = 5
    recursion_cap: Optional[int] = None  # None: erosion-schedule length + 2
    one_shot: bool = False
    strict: bool = False
    temperature: float = 1.0

    def __post_init__(self):
        if self.peel_width < 1:
            raise ValueError("peel width must be >= 1")
        if self.ref_stride < 1:
            raise ValueError("reference stride must be >= 1")


@dataclass
class RunCounters:
    """Work counters used by the caching and cost-asymmetry checks."""

    similarity_evals: int = 0
    encoder_passes: int = 0
    reference_encodes: int = 0
    recursions: int = 0


@dataclass
class EncodedReference:
    index: int
    key: Tensor
    value: Tensor
    valid_feat: MaskPlane

    def state_hash(self) -> int:
        return hash(
            (
                self.index,
                self.key.data.tobytes(),
                self.value.data.tobytes(),
                self.valid_feat.bits.tobytes(),
            )
        )


@dataclass
class FrameSet:
    """Frames with their hole and validity masks; masks partition each frame."""

    frames: list[np.ndarray]
    holes: list[MaskPlane]
    valids: list[MaskPlane]

    def __post_init__(self):
        if not (len(self.frames) == len(self.holes) == len(self.valids)):
            raise ValueError("frames, holes and valids must have equal length")
        if not self.frames:
            raise ValueError("empty frame set")
        extent = self.frames[0].shape
        for x, h, v in zip(self.frames, self.holes, self.valids):
            if x.shape != extent or x.ndim != 3 or x.shape[0] != 3:
                raise ValueError("all frames must share one [3,H,W] extent")
            if h.shape != extent[1:] or v.shape != extent[1:]:
                raise ValueError("mask extents must match the frames")
            if (h.bits & v.bits).any():
                raise ValueError("hole and validity overlap")
            if not (h.bits | v.bits).all():
                raise ValueError("hole and validity must cover the frame")

    @property
    def count(self) -> int:
        return len(self.frames)


def _pad_amounts(extent: int) -> int:
    return (-extent) % SCALE


def _pad_spatial(arr: np.ndarray) -> np.ndarray:
    """Reflect-pad the trailing two axes up to a multiple of 4."""
    ph = _pad_amounts(arr.shape[-2])
    pw = _pad_amounts(arr.shape[-1])
    if ph == 0 and pw == 0:
        return arr
    pad = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
    # reflect needs pad < extent; tiny frames fall back to edge replication
    if ph < arr.shape[-2] and pw < arr.shape[-1]:
        return np.pad(arr, pad, mode="reflect")
    return np.pad(arr, pad, mode="edge")


def _pad_mask(mask: MaskPlane, fill: bool) -> MaskPlane:
    ph = _pad_amounts(mask.height)
    pw = _pad_amounts(mask.width)
    if ph == 0 and pw == 0:
        return mask
    bits = np.pad(mask.bits, ((0, ph), (0, pw)), mode="constant", constant_values=fill)
    return MaskPlane(bits)


def sample_references(frame_count: int, stride: int, target: int) -> list[int]:
    """Every stride-th frame index, with the target itself removed."""
    if frame_count < 1:
        raise ValueError("frame count must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    indices = [i for i in range(0, frame_count, stride) if i != target]
    if not indices:
        raise NoReferenceError(
            f"no reference frames available (count={frame_count}, stride={stride})"
        )
    return indices


def encode_reference(
    index: int,
    frame: np.ndarray,
    hole: MaskPlane,
    valid: MaskPlane,
    model: CompletionNetwork,
    counters: Optional[RunCounters] = None,
) -> EncodedReference:
    """Embed one reference frame; its key/value maps are then frozen."""
    hole_pad = _pad_mask(hole, fill=False)
    valid_pad = _pad_mask(valid, fill=True)
    with no_grad():
        key, value = model.encode(_pad_spatial(frame), hole_pad, valid_pad)
    if counters is not None:
        counters.encoder_passes += 1
        counters.reference_encodes += 1
    return EncodedReference(index, key, value, downsample_mask(valid_pad, SCALE, ALL))


def encode_references(
    frameset: FrameSet,
    indices: Sequence[int],
    model: CompletionNetwork,
    counters: Optional[RunCounters] = None,
) -> list[EncodedReference]:
    return [
        encode_reference(
            i, frameset.frames[i], frameset.holes[i], frameset.valids[i], model, counters
        )
        for i in indices
    ]


def _peel_sequence(hole: MaskPlane, opts: CompletionOptions) -> tuple[list[MaskPlane], int]:
    """Planned peels plus the recursion cap for this frame."""
    if opts.one_shot:
        peels = [hole.copy()] if not hole.is_empty() else []
    else:
        peels = erode_schedule(hole, opts.peel_width)
    cap = opts.recursion_cap if opts.recursion_cap is not None else len(peels) + 2
    return peels, cap


def complete_image(
    target: np.ndarray,
    hole: MaskPlane,
    valid: MaskPlane,
    references: Sequence[EncodedReference],
    model: CompletionNetwork,
    opts: Optional[CompletionOptions] = None,
    counters: Optional[RunCounters] = None,
    score_hook: Optional[Callable] = None,
) -> tuple[np.ndarray, dict]:
    """Fill the hole one peel per recursion; returns (frame, trace).

    Pixels outside the original hole are bit-identical to the input.  The
    trace records per-recursion peel areas and any no-reference fallbacks.
    """
    opts = opts or CompletionOptions()
    counters = counters if counters is not None else RunCounters()
    x = np.array(target, dtype=np.float32, copy=True)
    trace = {"recursions": 0, "peel_areas": [], "fallbacks": 0}
    if hole.is_empty():
        return x, trace

    degenerate = valid.is_empty()
    if degenerate and opts.strict:
        raise DegenerateMaskError("frame is entirely hole; nothing valid to keep")

    hole_cur = hole.copy()
    if degenerate or opts.one_shot:
        planned_peels: Optional[list[MaskPlane]] = None
        cap = opts.recursion_cap if opts.recursion_cap is not None else 3
    else:
        planned_peels, cap = _peel_sequence(hole_cur, opts)

    j = 0
    while not hole_cur.is_empty():
        if j >= cap:
            raise RecursionCapError(f"exceeded recursion cap {cap}; erosion is not shrinking")
        if degenerate or opts.one_shot:
            peel = hole_cur.copy()
        else:
            peel = get_peel(hole_cur, opts.peel_width)
        with no_grad():
            q, r = model.encode(
                _pad_spatial(x), _pad_mask(hole_cur, False), _pad_mask(valid, True)
            )
        counters.encoder_passes += 1
        peel_feat = downsample_mask(_pad_mask(peel, False), SCALE, ANY)
        try:
            z = asym_atten_block(
                q, r, peel_feat,
                [ref.key for ref in references],
                [ref.value for ref in references],
                [ref.valid_feat for ref in references],
                ref_ids=[ref.index for ref in references],
                temperature=opts.temperature,
                counters=counters,
                score_hook=score_hook,
            )
        except NoValidReferenceError:
            if opts.strict:
                raise
            log.warning("no valid reference pixels; decoding without retrieval")
            trace["fallbacks"] += 1
            z = r
        with no_grad():
            xhat = model.decode(z, peel_feat).data
        xhat = xhat[:, : x.shape[1], : x.shape[2]]
        x = np.where(peel.bits[None], xhat, x)
        hole_cur = hole_cur - peel
        counters.recursions += 1
        trace["recursions"] += 1
        trace["peel_areas"].append(int(peel.area()))
        j += 1
    if planned_peels is not None and trace["recursions"] != len(planned_peels):
        raise RecursionCapError(
            f"filled in {trace['recursions']} recursions, schedule said {len(planned_peels)}"
        )
    return x, trace


def one_shot_complete(
    target: np.ndarray,
    hole: MaskPlane,
    valid: MaskPlane,
    references: Sequence[EncodedReference],
    model: CompletionNetwork,
    opts: Optional[CompletionOptions] = None,
    counters: Optional[RunCounters] = None,
) -> tuple[np.ndarray, dict]:
    """Ablation path: the whole hole is treated as a single peel."""
    base = opts or CompletionOptions()
    shot = CompletionOptions(
        peel_width=base.peel_width,
        ref_stride=base.ref_stride,
        recursion_cap=base.recursion_cap,
        one_shot=True,
        strict=base.strict,
        temperature=base.temperature,
    )
    return complete_image(target, hole, valid, references, model, shot, counters)


def complete_video(
    frameset: FrameSet,
    model: CompletionNetwork,
    opts: Optional[CompletionOptions] = None,
    counters: Optional[RunCounters] = None,
    score_hook: Optional[Callable] = None,
) -> tuple[FrameSet, list[dict]]:
    """Complete every frame against a shared, encode-once reference pool."""
    opts = opts or CompletionOptions()
    counters = counters if counters is not None else RunCounters()
    try:
        sampled = [
            i for i in range(0, frameset.count, opts.ref_stride)
        ]
        if not sampled:
            raise NoReferenceError("reference sampling produced nothing")
        encoded = {
            ref.index: ref for ref in encode_references(frameset, sampled, model, counters)
        }
    except NoReferenceError:
        if opts.strict:
            raise
        encoded = {}

    pool_hashes = {i: ref.state_hash() for i, ref in encoded.items()}
    out_frames: list[np.ndarray] = []
    reports: list[dict] = []
    for i in range(frameset.count):
        pool = [ref for idx, ref in sorted(encoded.items()) if idx != i]
        started = time.perf_counter()
        frame, trace = complete_image(
            frameset.frames[i], frameset.holes[i], frameset.valids[i],
            pool, model, opts, counters, score_hook=score_hook,
        )
        reports.append(
            {
                "frame": i,
                "recursions": trace["recursions"],
                "fallbacks": trace["fallbacks"],
                "seconds": time.perf_counter() - started,
            }
        )
        out_frames.append(frame)
    for i, ref in encoded.items():
        if ref.state_hash() != pool_hashes[i]:
            raise RuntimeError(f"reference {i} feature maps changed during the run")
    done = [MaskPlane.zeros(f.shape[1], f.shape[2]) for f in out_frames]
    full = [MaskPlane.ones(f.shape[1], f.shape[2]) for f in out_frames]
    completed = FrameSet(out_frames, done, full)
    return completed, reports
