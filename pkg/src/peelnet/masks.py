"""Exact binary-mask algebra: distance transform, peels, erosion, pooling.

All operations treat a mask as a strict set of pixels.  The distance
transform is the exact Euclidean one (two-pass squared-distance algorithm
with per-row lower envelopes), so peel extraction can be tested as an
equality against brute force rather than a tolerance.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateMaskError

ANY = "any"
ALL = "all"


class MaskPlane:
    """Binary per-pixel plane; 1 means member."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        arr = np.asarray(bits)
        if arr.ndim != 2:
            raise ValueError("MaskPlane expects a 2-D array")
        self.bits = arr.astype(bool)

    @classmethod
    def zeros(cls, height: int, width: int) -> "MaskPlane":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def ones(cls, height: int, width: int) -> "MaskPlane":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def area(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def copy(self) -> "MaskPlane":
        return MaskPlane(self.bits.copy())

    def __and__(self, other: "MaskPlane") -> "MaskPlane":
        return MaskPlane(self.bits & other.bits)

    def __or__(self, other: "MaskPlane") -> "MaskPlane":
        return MaskPlane(self.bits | other.bits)

    def __sub__(self, other: "MaskPlane") -> "MaskPlane":
        return MaskPlane(self.bits & ~other.bits)

    def __invert__(self) -> "MaskPlane":
        return MaskPlane(~self.bits)

    def __eq__(self, other) -> bool:
        return isinstance(other, MaskPlane) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        raise TypeError("MaskPlane is mutable; not hashable")

    def __repr__(self):
        return f"MaskPlane({self.height}x{self.width}, area={self.area()})"


def _envelope_1d(f: np.ndarray) -> np.ndarray:
    """1-D squared distance transform d[q] = min_p (q-p)^2 + f[p].

    Lower-envelope-of-parabolas sweep; entries with f = inf carry no parabola.
    """
    n = f.shape[0]
    out = np.full(n, np.inf)
    v = np.empty(n, dtype=np.intp)
    z = np.empty(n + 1)
    k = -1
    for q in range(n):
        fq = f[q]
        if not np.isfinite(fq):
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        s = ((fq + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((fq + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        return out
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        out[q] = (q - v[k]) ** 2 + f[v[k]]
    return out


def distance_transform(hole: MaskPlane) -> np.ndarray:
    """Exact Euclidean distance from each pixel to the nearest non-hole pixel.

    Non-hole pixels get 0.  Raises DegenerateMaskError when every pixel is a
    hole, because the distance is undefined then.
    """
    bits = hole.bits
    if bits.all():
        raise DegenerateMaskError("mask has no non-hole pixel")
    h, w = bits.shape
    # Pass 1: per-column vertical distance to the nearest non-hole pixel,
    # via two linear sweeps (1-D Euclidean distance is just a count).
    col = np.where(bits, np.inf, 0.0)
    for i in range(1, h):
        col[i] = np.minimum(col[i], col[i - 1] + 1.0)
    for i in range(h - 2, -1, -1):
        col[i] = np.minimum(col[i], col[i + 1] + 1.0)
    f = np.where(np.isfinite(col), col * col, np.inf)
    # Pass 2: per-row lower envelope over the squared vertical distances.
    sq = np.empty((h, w))
    for i in range(h):
        sq[i] = _envelope_1d(f[i])
    return np.sqrt(sq)


def get_peel(hole: MaskPlane, p: float) -> MaskPlane:
    """Hole pixels within Euclidean distance p of the nearest non-hole pixel."""
    if p < 1:
        raise ValueError("peel width must be >= 1")
    if hole.is_empty():
        return MaskPlane.zeros(hole.height, hole.width)
    dist = distance_transform(hole)
    return MaskPlane(hole.bits & (dist <= p))


def erode_schedule(hole: MaskPlane, p: float) -> list[MaskPlane]:
    """Peels extracted until the hole is empty; they partition the hole."""
    peels: list[MaskPlane] = []
    current = hole.copy()
    while not current.is_empty():
        peel = get_peel(current, p)
        peels.append(peel)
        current = current - peel
    return peels


def downsample_mask(mask: MaskPlane, factor: int = 4, mode: str = ANY) -> MaskPlane:
    """Pool a mask down by `factor`, padding with non-member first.

    ANY marks a cell when any covered pixel is a member (used for peels, so
    no peel pixel is left unattended); ALL requires every covered pixel
    (used for validity, so a feature cell is valid only if fully genuine).
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if mode not in (ANY, ALL):
        raise ValueError(f"unknown mode {mode!r}")
    bits = mask.bits
    h, w = bits.shape
    ph = (-h) % factor
    pw = (-w) % factor
    if ph or pw:
        bits = np.pad(bits, ((0, ph), (0, pw)), constant_values=False)
    blocks = bits.reshape(bits.shape[0] // factor, factor, bits.shape[1] // factor, factor)
    if mode == ANY:
        pooled = blocks.any(axis=(1, 3))
    else:
        pooled = blocks.all(axis=(1, 3))
    return MaskPlane(pooled)
