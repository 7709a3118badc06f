"""Non-local matching between target peel pixels and reference valid pixels.

Instead of attending over whole feature maps, both sides are first compressed
into index matrices: queries keep only peel columns, keys and values keep only
valid columns pooled across every reference frame.  Matching then reduces to
two matrix products (similarities, then weighted value retrieval), and the
retrieved vectors are added back at their original peel positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import NoValidReferenceError
from .masks import MaskPlane
from .opnt import write as opnt_write
from .tensor import Tensor

EPSILON = 1e-8


@dataclass
class IndexedFeatures:
    """Feature columns plus the (frame, y, x) coordinate of each column."""

    matrix: Tensor  # [C, count]
    index: np.ndarray  # [count, 3] int64 rows of (frame, y, x)

    @property
    def count(self) -> int:
        return int(self.index.shape[0])

    def __post_init__(self):
        if self.matrix.shape[1] != self.index.shape[0]:
            raise ValueError("column count does not match index length")


def gather(
    maps: Sequence[Tensor],
    masks: Sequence[MaskPlane],
    frame_ids: Optional[Sequence[int]] = None,
) -> IndexedFeatures:
    """Extract masked columns, row-major within a frame, frames in given order."""
    if len(maps) != len(masks):
        raise ValueError("need one mask per feature map")
    if frame_ids is None:
        frame_ids = list(range(len(maps)))
    channels = maps[0].shape[0]
    pieces: list[Tensor] = []
    coords: list[np.ndarray] = []
    for fid, fmap, mask in zip(frame_ids, maps, masks):
        if fmap.ndim != 3 or fmap.shape[0] != channels:
            raise ValueError("feature maps must be [C,h,w] with a common C")
        if fmap.shape[1:] != mask.shape:
            raise ValueError("mask resolution must equal feature resolution")
        h, w = mask.shape
        flat = mask.bits.reshape(-1)
        lin = np.flatnonzero(flat)
        if lin.size == 0:
            continue
        cols = T.take_columns(T.reshape(fmap, (channels, h * w)), lin)
        pieces.append(cols)
        ys, xs = np.divmod(lin, w)
        coords.append(np.stack([np.full(lin.size, fid, dtype=np.int64), ys, xs], axis=1))
    if not pieces:
        dtype = maps[0].dtype if maps else np.float32
        empty = Tensor(np.zeros((channels, 0), dtype=dtype))
        return IndexedFeatures(empty, np.zeros((0, 3), dtype=np.int64))
    matrix = pieces[0] if len(pieces) == 1 else T.concat(pieces, axis=1)
    return IndexedFeatures(matrix, np.concatenate(coords, axis=0))


def _column_norms(a: Tensor) -> Tensor:
    return T.sqrt(T.tensor_sum(T.mul(a, a), axis=0, keepdims=True))


def attend(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    temperature: float = 1.0,
    counters=None,
) -> tuple[Tensor, Tensor]:
    """Cosine-similarity softmax over the m reference columns, then retrieval.

    Returns (u [C_v, c], scores [c, m]); one softmax spans all reference
    frames at once.  The c*m similarity evaluations are the whole cost, which
    is what makes the index compression pay off.
    """
    c = q.shape[1]
    m = k.shape[1]
    if m == 0:
        raise NoValidReferenceError("no valid reference pixels to match against")
    if q.shape[0] != k.shape[0]:
        raise ValueError("query and key dimensionality differ")
    if v.shape[1] != m:
        raise ValueError("key and value column counts differ")
    if counters is not None:
        counters.similarity_evals += c * m
    dots = T.matmul(T.transpose2d(q), k)
    denom = T.add(T.matmul(T.transpose2d(_column_norms(q)), _column_norms(k)), Tensor(EPSILON))
    sim = T.div(dots, denom)
    if temperature != 1.0:
        sim = T.div(sim, Tensor(float(temperature)))
    scores = T.softmax(sim, axis=1)
    u = T.matmul(v, T.transpose2d(scores))
    return u, scores


def scatter_add(r: Tensor, index: np.ndarray, u: Tensor) -> Tensor:
    """Add retrieved column i at peel position index[i]; elsewhere r unchanged."""
    if index.shape[0] != u.shape[1]:
        raise ValueError("index list does not match retrieved column count")
    channels, h, w = r.shape
    if index.size and not (
        (index[:, 1] >= 0).all()
        and (index[:, 1] < h).all()
        and (index[:, 2] >= 0).all()
        and (index[:, 2] < w).all()
    ):
        raise IndexError("peel index outside the value map")
    lin = index[:, 1] * w + index[:, 2]
    if np.unique(lin).size != lin.size:
        raise ValueError("duplicate peel index")
    flat = T.add_at_columns(T.reshape(r, (channels, h * w)), lin, u)
    return T.reshape(flat, (channels, h, w))


def asym_atten_block(
    q: Tensor,
    r: Tensor,
    peel: MaskPlane,
    ref_keys: Sequence[Tensor],
    ref_values: Sequence[Tensor],
    ref_valids: Sequence[MaskPlane],
    ref_ids: Optional[Sequence[int]] = None,
    temperature: float = 1.0,
    counters=None,
    score_hook: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], None]] = None,
) -> Tensor:
    """gather -> attend -> scatter_add over the target's current peel.

    An empty peel skips matching entirely and returns r as-is.  All reference
    validity empty raises NoValidReferenceError; the driver decides whether
    that is fatal.
    """
    if peel.is_empty():
        return r
    if not ref_keys:
        raise NoValidReferenceError("reference pool is empty")
    queries = gather([q], [peel])
    keys = gather(ref_keys, ref_valids, frame_ids=ref_ids)
    values = gather(ref_values, ref_valids, frame_ids=ref_ids)
    m = sum(int(vmask.area()) for vmask in ref_valids)
    if keys.count == 0:
        raise NoValidReferenceError("all reference validity maps are empty")
    u, scores = attend(queries.matrix, keys.matrix, values.matrix, temperature, counters)
    assert scores.shape[1] == m, "score width must equal the valid-cell count"
    if score_hook is not None:
        score_hook(scores.data.copy(), queries.index, keys.index)
    return scatter_add(r, queries.index, u)


def dump_scores(prefix, scores: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> None:
    """Write one score matrix plus its row/column coordinate sidecars.

    Emits <prefix>.opnt and two text files listing `frame,y,x` per score-matrix
    row (peel pixels) and column (reference valid pixels).
    """
    prefix = Path(prefix)
    opnt_write(prefix.with_name(prefix.name + ".opnt"), scores.astype(np.float32))
    for suffix, table in ((".rows.txt", rows), (".cols.txt", cols)):
        lines = [f"{f},{y},{x}" for f, y, x in table]
        prefix.with_name(prefix.name + suffix).write_text("\n".join(lines) + "\n")
