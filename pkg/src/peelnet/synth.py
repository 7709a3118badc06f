"""Procedural training samples: one base scene, five jittered views, blob holes.

A sample is one target plus four references cut from the same underlying
scene by small random affines, so references genuinely contain the content
hidden behind the target's hole.  Scenes are synthesized (corner gradients
plus textured shapes) or drawn from a user image directory; hole masks come
from procedural blobs or user mask files, moved by their own affines.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import SynthesisError
from .imgio import list_frames, load_frame, load_mask
from .masks import MaskPlane

VIEWS_PER_SAMPLE = 5  # target + 4 references
MAX_HOLE_FRACTION = 0.8
MIN_TARGET_HOLE_FRACTION = 0.02


@dataclass(frozen=True)
class AffineJitter:
    rotation_deg: float = 10.0
    translate_frac: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)

    @classmethod
    def identity(cls) -> "AffineJitter":
        return cls(rotation_deg=0.0, translate_frac=0.0, scale_range=(1.0, 1.0))

    def draw(self, rng: np.random.Generator) -> tuple[float, float, float, float]:
        """(angle_rad, scale, ty, tx) with translations as fractions."""
        angle = np.deg2rad(rng.uniform(-self.rotation_deg, self.rotation_deg))
        scale = rng.uniform(*self.scale_range)
        ty = rng.uniform(-self.translate_frac, self.translate_frac)
        tx = rng.uniform(-self.translate_frac, self.translate_frac)
        return float(angle), float(scale), float(ty), float(tx)


@dataclass
class TrainSample:
    """Index 0 is the target; ground_truth is its unmasked view."""

    frames: list[np.ndarray]
    holes: list[MaskPlane]
    valids: list[MaskPlane]
    ground_truth: np.ndarray

    def __post_init__(self):
        if len(self.frames) != VIEWS_PER_SAMPLE:
            raise ValueError(f"expected {VIEWS_PER_SAMPLE} views")
        for h, v in zip(self.holes, self.valids):
            if (h.bits & v.bits).any() or not (h.bits | v.bits).all():
                raise ValueError("hole and validity must partition the frame")


def procedural_scene(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Corner-gradient backdrop with a handful of textured shapes, [3,H,W]."""
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width), indexing="ij"
    )
    corners = rng.uniform(0.0, 1.0, size=(4, 3))
    img = np.empty((3, height, width), dtype=np.float64)
    for c in range(3):
        top = corners[0, c] * (1 - xx) + corners[1, c] * xx
        bottom = corners[2, c] * (1 - xx) + corners[3, c] * xx
        img[c] = top * (1 - yy) + bottom * yy
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)
        ry, rx = rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)
        theta = rng.uniform(0.0, np.pi)
        u = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
        v = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
        if rng.random() < 0.5:
            region = (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
        else:
            region = (np.abs(u) <= ry) & (np.abs(v) <= rx)
        color = rng.uniform(0.0, 1.0, size=3)
        fill = np.broadcast_to(color[:, None, None], img.shape).copy()
        if rng.random() < 0.5:
            freq = rng.uniform(8.0, 40.0, size=2)
            phase = rng.uniform(0.0, 2 * np.pi)
            wave = 0.75 + 0.25 * np.sin(freq[0] * yy + freq[1] * xx + phase)
            fill = fill * wave
        img = np.where(region, fill, img)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def blob_mask(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Union of a few random ellipses; bool [H,W]."""
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    bits = np.zeros((height, width), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        cy = rng.uniform(0.2, 0.8) * height
        cx = rng.uniform(0.2, 0.8) * width
        ry = rng.uniform(0.08, 0.3) * height
        rx = rng.uniform(0.08, 0.3) * width
        theta = rng.uniform(0.0, np.pi)
        u = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
        v = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
        bits |= (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
    return bits


def _affine_view(
    base: np.ndarray,
    params: tuple[float, float, float, float],
    out_hw: tuple[int, int],
    order: int,
) -> np.ndarray:
    """Sample a (h,w) window from base under rotation/scale/translation.

    Identity parameters with even margins reduce to an exact center crop.
    """
    angle, scale, ty, tx = params
    hb, wb = base.shape[-2:]
    h, w = out_hw
    cos, sin = np.cos(angle), np.sin(angle)
    # output coord o maps to input coord M @ (o - out_center) + in_center + t
    matrix = np.array([[cos, sin], [-sin, cos]]) / scale
    in_center = np.array([(hb - 1) / 2.0, (wb - 1) / 2.0])
    out_center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([ty * h, tx * w])
    offset = in_center + shift - matrix @ out_center
    if base.ndim == 2:
        return ndimage.affine_transform(
            base, matrix, offset=offset, output_shape=(h, w), order=order, mode="nearest"
        )
    planes = [
        ndimage.affine_transform(
            plane, matrix, offset=offset, output_shape=(h, w), order=order, mode="nearest"
        )
        for plane in base
    ]
    return np.stack(planes)


def _mask_view(
    pool: list[np.ndarray],
    rng: np.random.Generator,
    out_hw: tuple[int, int],
    jitter: AffineJitter,
    need_min: bool,
    max_retries: int = 25,
) -> MaskPlane:
    total = out_hw[0] * out_hw[1]
    for _ in range(max_retries):
        base = pool[int(rng.integers(len(pool)))]
        bits = _affine_view(base.astype(np.float32), jitter.draw(rng), out_hw, order=0) > 0.5
        frac = bits.sum() / total
        if frac > MAX_HOLE_FRACTION:
            continue
        if need_min and frac < MIN_TARGET_HOLE_FRACTION:
            continue
        return MaskPlane(bits)
    raise SynthesisError(f"could not draw a usable hole mask in {max_retries} tries")


def synth_sample(
    scene: np.ndarray,
    mask_pool: list[np.ndarray],
    rng: np.random.Generator,
    size: tuple[int, int],
    jitter: Optional[AffineJitter] = None,
) -> TrainSample:
    """Cut 5 views of one scene and drop an independent hole on each."""
    if not mask_pool:
        raise SynthesisError("mask pool is empty")
    if scene.shape[-2] < size[0] or scene.shape[-1] < size[1]:
        raise SynthesisError("scene smaller than the sample resolution")
    jitter = jitter if jitter is not None else AffineJitter()
    frames, holes, valids = [], [], []
    for view in range(VIEWS_PER_SAMPLE):
        frame = _affine_view(scene, jitter.draw(rng), size, order=1)
        frame = np.clip(frame, 0.0, 1.0).astype(np.float32)
        hole = _mask_view(mask_pool, rng, size, jitter, need_min=(view == 0))
        frames.append(frame)
        holes.append(hole)
        valids.append(~hole)
    return TrainSample(frames, holes, valids, ground_truth=frames[0].copy())


class SceneSampler:
    """Draws training samples; procedural and user-directory sources mix 50/50.

    With fixed=True the first sample is memoized and returned forever, which
    is the single-scene overfit mode used by the desk preset.
    """

    def __init__(
        self,
        size: tuple[int, int],
        seed: int = 0,
        image_dir: Optional[str] = None,
        mask_dir: Optional[str] = None,
        jitter: Optional[AffineJitter] = None,
        fixed: bool = False,
        scene_margin: int = 16,
    ):
        self.size = size
        self.rng = np.random.default_rng(seed)
        self.jitter = jitter if jitter is not None else AffineJitter()
        self.fixed = fixed
        self._frozen: Optional[TrainSample] = None
        h, w = size
        self.scene_hw = (h + 2 * scene_margin, w + 2 * scene_margin)
        self._images: list[np.ndarray] = []
        if image_dir is not None:
            self._images = [np.asarray(load_frame(p)) for p in list_frames(Path(image_dir))]
        self._user_masks: list[np.ndarray] = []
        if mask_dir is not None:
            self._user_masks = [
                load_mask(p, strict=False).bits for p in list_frames(Path(mask_dir))
            ]

    def _scene(self) -> np.ndarray:
        if self._images and (not self.fixed) and self.rng.random() < 0.5:
            img = self._images[int(self.rng.integers(len(self._images)))]
            if img.shape[-2] >= self.scene_hw[0] and img.shape[-1] >= self.scene_hw[1]:
                return img
        return procedural_scene(self.rng, *self.scene_hw)

    def _pool(self) -> list[np.ndarray]:
        pool = [blob_mask(self.rng, *self.size) for _ in range(3)]
        if self._user_masks and self.rng.random() < 0.5:
            pool = [self._user_masks[int(self.rng.integers(len(self._user_masks)))]]
        return pool

    def draw(self) -> TrainSample:
        if self.fixed and self._frozen is not None:
            return self._frozen
        sample = synth_sample(self._scene(), self._pool(), self.rng, self.size, self.jitter)
        if self.fixed:
            self._frozen = sample
        return sample
