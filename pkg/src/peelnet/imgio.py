"""PNG I/O for frames and masks.

Frames are stored as lossless 8-bit RGB; internal compute stays float in
[0,1] and the q = round(255x)/255 quantization happens exactly once, at
export.  Masks are 8-bit single-channel, 0 = non-member, 255 = member.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .masks import MaskPlane

log = logging.getLogger(__name__)

FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def load_frame(path) -> np.ndarray:
    """Load an RGB image as float32 [3,H,W] in [0,1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_frame(path, frame: np.ndarray) -> None:
    """Quantize a [3,H,W] float frame to 8-bit PNG (round once, clip)."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError("expected frame of shape [3,H,W]")
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path)


def load_mask(path, strict: bool = True) -> MaskPlane:
    """Load an 8-bit mask; strict mode rejects values other than 0 and 255."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.uint8)
    nonbinary = (arr != 0) & (arr != 255)
    if nonbinary.any():
        if strict:
            raise ValueError(
                f"{path}: mask contains values other than 0/255 "
                f"({int(nonbinary.sum())} pixels); use lenient mode to threshold"
            )
        log.warning("%s: non-binary mask, thresholding at 128", path)
    return MaskPlane(arr >= 128)


def save_mask(path, mask: MaskPlane) -> None:
    Image.fromarray(np.where(mask.bits, 255, 0).astype(np.uint8), mode="L").save(path)


def list_frames(directory) -> list[Path]:
    """Image files of a directory in sorted name order."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no image files in {root}")
    return files
