"""Training losses: masked pixel terms, perceptual content/style terms on a
fixed conv pyramid, anisotropic total variation, and the weighted total.

Pixel losses look at the raw decoder outputs; perceptual and TV losses look
at the composed frames (decoder output merged into the non-hole content).
Each term is a per-recursion quantity summed over recursions, so a sample
that needs three peels yields three contributions per term.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import tensor as T
from .errors import NonFiniteLossError
from .masks import MaskPlane
from .opnt import pack as opnt_pack, unpack as opnt_unpack
from .tensor import ConvSpec, Tensor

WEIGHT_PEEL = 100.0
WEIGHT_VALID = 1.0
WEIGHT_CONTENT = 0.05
WEIGHT_STYLE = 120.0
WEIGHT_TV = 0.01

EMBEDDER_CHANNELS = (8, 16, 32)
EMBEDDER_SEED = 7


class PerceptualEmbedder:
    """Three frozen conv+relu+avgpool stages standing in for a pretrained net.

    Weights are drawn once from a seeded generator and never trained, so the
    stage outputs define a fixed feature metric that is identical across runs.
    """

    def __init__(self, seed: int = EMBEDDER_SEED, params: dict | None = None):
        self.specs = []
        in_c = 3
        for out_c in EMBEDDER_CHANNELS:
            self.specs.append(ConvSpec(in_c, out_c, 3, padding=1))
            in_c = out_c
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for i, spec in enumerate(self.specs, start=1):
                fan_in = spec.in_channels * 9
                limit = np.sqrt(3.0 / fan_in)
                params[f"stage{i}.w"] = Tensor(
                    rng.uniform(
                        -limit, limit,
                        size=(spec.out_channels, spec.in_channels, 3, 3),
                    ).astype(np.float32)
                )
                params[f"stage{i}.b"] = Tensor(np.zeros(spec.out_channels, dtype=np.float32))
        else:
            for i, spec in enumerate(self.specs, start=1):
                expect = (spec.out_channels, spec.in_channels, 3, 3)
                if params[f"stage{i}.w"].shape != expect:
                    raise ValueError(f"stage{i} weight shape {params[f'stage{i}.w'].shape}")
                if params[f"stage{i}.b"].shape != (spec.out_channels,):
                    raise ValueError(f"stage{i} bias shape")
        self.params = params

    def param_hash(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return digest.hexdigest()

    def stages(self, x: Union[Tensor, np.ndarray]) -> list[Tensor]:
        """Feature maps of the 3 stages for x of shape [3,H,W]; H,W % 8 == 0."""
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
        if t.ndim != 3 or t.shape[0] != 3:
            raise ValueError("embedder input must be [3,H,W]")
        if t.shape[1] % 8 or t.shape[2] % 8:
            raise ValueError("embedder needs extents divisible by 8")
        h = T.reshape(t, (1,) + t.shape)
        feats = []
        for i, spec in enumerate(self.specs, start=1):
            h = T.relu(T.conv2d(h, spec, self.params[f"stage{i}.w"], self.params[f"stage{i}.b"]))
            h = T.avgpool2x(h)
            feats.append(T.reshape(h, h.shape[1:]))
        return feats

    def save(self, path) -> None:
        path = Path(path)
        lines = ["PEELNET-EMBEDDER v1", f"params {len(self.params)}"]
        blobs, offset = [], 0
        for name in sorted(self.params):
            blob = opnt_pack(self.params[name].data)
            dims = "x".join(str(d) for d in self.params[name].shape)
            lines.append(f"{name} {dims} {offset} {len(blob)}")
            blobs.append(blob)
            offset += len(blob)
        lines.append("end")
        with open(path, "wb") as fh:
            fh.write(("\n".join(lines) + "\n").encode())
            for blob in blobs:
                fh.write(blob)

    @classmethod
    def load(cls, path) -> "PerceptualEmbedder":
        raw = Path(path).read_bytes()
        head_end = raw.index(b"end\n") + len(b"end\n")
        lines = raw[:head_end].decode().splitlines()
        if lines[0] != "PEELNET-EMBEDDER v1":
            raise ValueError(f"{path}: not an embedder file")
        count = int(lines[1].split()[1])
        payload = raw[head_end:]
        params = {}
        for line in lines[2 : 2 + count]:
            name, _, offset, nbytes = line.split()
            params[name] = Tensor(opnt_unpack(payload[int(offset) : int(offset) + int(nbytes)]))
        return cls(params=params)


def masked_mean_abs(diff: Tensor, mask: MaskPlane) -> Tensor:
    """Mean of |diff| over the mask's member pixels across all 3 channels."""
    area = int(mask.area())
    if area == 0:
        return Tensor(np.zeros((), dtype=diff.dtype))
    bits = Tensor(mask.bits.astype(diff.dtype)[None])
    total = T.tensor_sum(T.mul(T.absolute(diff), bits))
    return T.div(total, Tensor(diff.dtype.type(3 * area)))


def loss_pixel(
    raws: Sequence[Tensor],
    peels: Sequence[MaskPlane],
    valid: MaskPlane,
    truth: Union[Tensor, np.ndarray],
) -> tuple[Tensor, Tensor]:
    """Per-recursion masked means of |raw - truth|, summed over recursions."""
    y = truth if isinstance(truth, Tensor) else Tensor(np.asarray(truth, dtype=np.float32))
    zero = Tensor(np.zeros((), dtype=y.dtype))
    l_peel, l_valid = zero, zero
    for raw, peel in zip(raws, peels):
        diff = T.sub(raw, y)
        l_peel = T.add(l_peel, masked_mean_abs(diff, peel))
        l_valid = T.add(l_valid, masked_mean_abs(diff, valid))
    return l_peel, l_valid


def gram(f: Tensor) -> Tensor:
    """G = F F^T / (C N) for a [C,N] feature matrix."""
    if f.ndim != 2:
        raise ValueError("gram expects a [C,N] matrix")
    c, n = f.shape
    if n < 1:
        raise ValueError("gram needs at least one column")
    return T.div(T.matmul(f, T.transpose2d(f)), Tensor(f.dtype.type(c * n)))


def _flat_features(feat: Tensor) -> Tensor:
    c = feat.shape[0]
    return T.reshape(feat, (c, feat.shape[1] * feat.shape[2]))


def loss_perceptual(
    composeds: Sequence[Tensor],
    truth: Union[Tensor, np.ndarray],
    embedder: PerceptualEmbedder,
) -> tuple[Tensor, Tensor]:
    """Content: mean |phi_s(X) - phi_s(Y)|; style: same on Gram matrices.

    Both sum over the 3 stages and over every composed recursion output.
    """
    y = truth if isinstance(truth, Tensor) else Tensor(np.asarray(truth, dtype=np.float32))
    truth_feats = embedder.stages(y)
    truth_grams = [gram(_flat_features(f)) for f in truth_feats]
    zero = Tensor(np.zeros((), dtype=y.dtype))
    l_content, l_style = zero, zero
    for x in composeds:
        feats = embedder.stages(x)
        for f, yf, yg in zip(feats, truth_feats, truth_grams):
            l_content = T.add(l_content, T.mean(T.absolute(T.sub(f, yf))))
            g = gram(_flat_features(f))
            l_style = T.add(l_style, T.mean(T.absolute(T.sub(g, yg))))
    return l_content, l_style


def total_variation(x: Tensor) -> Tensor:
    """Anisotropic L1 TV: mean |vertical diff| + mean |horizontal diff|."""
    every = slice(None)
    dy = T.sub(T.spatial_slice(x, slice(1, None), every), T.spatial_slice(x, slice(None, -1), every))
    dx = T.sub(T.spatial_slice(x, every, slice(1, None)), T.spatial_slice(x, every, slice(None, -1)))
    return T.add(T.mean(T.absolute(dy)), T.mean(T.absolute(dx)))


def loss_tv(composeds: Sequence[Tensor]) -> Tensor:
    acc = Tensor(np.zeros((), dtype=np.float32))
    for x in composeds:
        acc = T.add(acc, total_variation(x))
    return acc


@dataclass
class LossBreakdown:
    l_peel: Tensor
    l_valid: Tensor
    l_content: Tensor
    l_style: Tensor
    l_tv: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "L_peel": self.l_peel.item(),
            "L_valid": self.l_valid.item(),
            "L_content": self.l_content.item(),
            "L_style": self.l_style.item(),
            "L_tv": self.l_tv.item(),
            "total": self.total.item(),
        }


def loss_total(
    l_peel: Tensor,
    l_valid: Tensor,
    l_content: Tensor,
    l_style: Tensor,
    l_tv: Tensor,
) -> LossBreakdown:
    """total = 100 L_peel + L_valid + 0.05 L_content + 120 L_style + 0.01 L_tv."""
    parts = {
        "L_peel": l_peel,
        "L_valid": l_valid,
        "L_content": l_content,
        "L_style": l_style,
        "L_tv": l_tv,
    }
    for name, part in parts.items():
        if not np.isfinite(part.data).all():
            raise NonFiniteLossError(f"{name} is not finite")
    total = T.mul(l_peel, WEIGHT_PEEL)
    total = T.add(total, l_valid)
    total = T.add(total, T.mul(l_content, WEIGHT_CONTENT))
    total = T.add(total, T.mul(l_style, WEIGHT_STYLE))
    total = T.add(total, T.mul(l_tv, WEIGHT_TV))
    return LossBreakdown(l_peel, l_valid, l_content, l_style, l_tv, total)
