"""Gated-convolution encoder with key/value heads, and the mirrored decoder.

The encoder downsamples to 1/4 scale (two stride-2 stages) and widens its
receptive field with dilated blocks (d = 2, 4, 8) before splitting into two
parallel gated heads, one for keys and one for values.  The decoder fuses
the updated value map with the peel mask, then restores full resolution with
two nearest-neighbor 2x upsamplings, ending in a sigmoid so outputs stay in
[0,1].  The exact layer table lives in NetworkConfig so it can be swapped
without touching the forward code.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .masks import MaskPlane
from .opnt import pack as opnt_pack, unpack as opnt_unpack
from .tensor import ConvSpec, Tensor

NEUTRAL_GREY = 0.5

_ACTIVATIONS = {
    "elu": T.elu,
    "relu": T.relu,
    "leaky_relu": T.leaky_relu,
    "linear": lambda x: x,
}


@dataclass(frozen=True)
class LayerSpec:
    """One gated layer of the table: geometry plus activation id."""

    name: str
    in_channels: int
    out_channels: int
    stride: int = 1
    dilation: int = 1
    activation: str = "elu"

    def conv_spec(self) -> ConvSpec:
        return ConvSpec(
            in_channels=self.in_channels,
            out_channels=self.out_channels,
            kernel_size=3,
            stride=self.stride,
            dilation=self.dilation,
            padding=T.same_padding(3, self.dilation),
        )


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 64
    key_dim: int = 64
    value_dim: int = 128
    activation: str = "elu"
    init_seed: int = 0

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        strides = [l.stride for l in self.encoder_layers()]
        if int(np.prod(strides)) != 4:
            raise ValueError("encoder strides must compose to 1/4 scale")

    @classmethod
    def paper(cls) -> "NetworkConfig":
        return cls(base_channels=64, key_dim=64, value_dim=128)

    @classmethod
    def desk(cls) -> "NetworkConfig":
        return cls(base_channels=16, key_dim=8, value_dim=16)

    @classmethod
    def tiny(cls) -> "NetworkConfig":
        """Smallest config that still exercises every stage; for grad tests."""
        return cls(base_channels=4, key_dim=4, value_dim=4)

    def encoder_layers(self) -> list[LayerSpec]:
        c = self.base_channels
        act = self.activation
        return [
            LayerSpec("enc1", 5, c, activation=act),
            LayerSpec("enc2", c, 2 * c, stride=2, activation=act),
            LayerSpec("enc3", 2 * c, 2 * c, activation=act),
            LayerSpec("enc4", 2 * c, 4 * c, stride=2, activation=act),
            LayerSpec("enc5", 4 * c, 4 * c, dilation=2, activation=act),
            LayerSpec("enc6", 4 * c, 4 * c, dilation=4, activation=act),
            LayerSpec("enc7", 4 * c, 4 * c, dilation=8, activation=act),
        ]

    def head_layers(self) -> list[LayerSpec]:
        c = self.base_channels
        return [
            LayerSpec("key_head", 4 * c, self.key_dim, activation="linear"),
            LayerSpec("value_head", 4 * c, self.value_dim, activation="linear"),
        ]

    def decoder_layers(self) -> list[LayerSpec]:
        """Stages split by the two 2x upsamplings: [dec1 dec2] ^ [dec3 dec4] ^ [dec5]."""
        c = self.base_channels
        act = self.activation
        return [
            LayerSpec("dec1", self.value_dim + 1, 4 * c, activation=act),
            LayerSpec("dec2", 4 * c, 4 * c, activation=act),
            LayerSpec("dec3", 4 * c, 2 * c, activation=act),
            LayerSpec("dec4", 2 * c, 2 * c, activation=act),
            LayerSpec("dec5", 2 * c, c, activation=act),
        ]

    def output_spec(self) -> ConvSpec:
        return ConvSpec(self.base_channels, 3, 3, padding=1)

    def gated_layer_table(self) -> list[LayerSpec]:
        return self.encoder_layers() + self.head_layers() + self.decoder_layers()

    def to_text(self) -> str:
        lines = [
            f"base_channels = {self.base_channels}",
            f"key_dim = {self.key_dim}",
            f"value_dim = {self.value_dim}",
            f"activation = {self.activation}",
            f"init_seed = {self.init_seed}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        kwargs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "activation":
                kwargs[key] = value
            else:
                kwargs[key] = int(value)
        return cls(**kwargs)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


@dataclass
class GatedConvLayer:
    """Feature conv and gate conv with identical geometry."""

    spec: ConvSpec
    feat_w: Tensor
    feat_b: Tensor
    gate_w: Tensor
    gate_b: Tensor
    activation: str = "elu"


def gated_conv(x: Tensor, layer: GatedConvLayer) -> Tensor:
    """activation(conv_feat(x)) * sigmoid(conv_gate(x))."""
    feat = T.conv2d(x, layer.spec, layer.feat_w, layer.feat_b)
    gate = T.conv2d(x, layer.spec, layer.gate_w, layer.gate_b)
    return T.mul(_ACTIVATIONS[layer.activation](feat), T.sigmoid(gate))


class Checkpoint:
    """Ordered name -> parameter tensor store with a config fingerprint."""

    def __init__(self, params: dict[str, Tensor], config: NetworkConfig, step: int = 0):
        self.params = params
        self.config = config
        self.step = step

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def astype(self, dtype) -> "Checkpoint":
        params = {
            name: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
            for name, t in self.params.items()
        }
        return Checkpoint(params, self.config, self.step)

    def state_hash(self) -> str:
        digest = hashlib.sha256()
        for name, t in self.params.items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(t.data).tobytes())
        return digest.hexdigest()

    def save(self, path) -> None:
        path = Path(path)
        blobs: list[bytes] = []
        lines = [
            "PEELNET-CHECKPOINT v1",
            f"step {self.step}",
            f"config {self.config.fingerprint()}",
            f"params {len(self.params)}",
        ]
        offset = 0
        for name, t in self.params.items():
            blob = opnt_pack(t.data)
            dims = "x".join(str(d) for d in t.data.shape)
            lines.append(f"{name} {dims} {offset} {len(blob)}")
            blobs.append(blob)
            offset += len(blob)
        lines.append("end")
        header = ("\n".join(lines) + "\n").encode()
        with open(path, "wb") as fh:
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        path.with_name(path.name + ".cfg").write_text(self.config.to_text())

    @classmethod
    def load(cls, path, config: Optional[NetworkConfig] = None, strict: bool = True) -> "Checkpoint":
        path = Path(path)
        if config is None:
            cfg_path = path.with_name(path.name + ".cfg")
            if not cfg_path.exists():
                raise FileNotFoundError(f"missing config sidecar {cfg_path}")
            config = NetworkConfig.from_text(cfg_path.read_text())
        raw = path.read_bytes()
        head_end = raw.index(b"end\n") + len(b"end\n")
        header = raw[:head_end].decode()
        lines = header.splitlines()
        if lines[0] != "PEELNET-CHECKPOINT v1":
            raise ValueError(f"{path}: not a checkpoint file")
        step = int(lines[1].split()[1])
        fingerprint = lines[2].split()[1]
        if strict and fingerprint != config.fingerprint():
            raise ValueError(
                f"{path}: checkpoint fingerprint {fingerprint} does not match "
                f"config {config.fingerprint()}"
            )
        count = int(lines[3].split()[1])
        params: dict[str, Tensor] = {}
        payload = raw[head_end:]
        for line in lines[4 : 4 + count]:
            name, dims, offset, nbytes = line.split()
            arr = opnt_unpack(payload[int(offset) : int(offset) + int(nbytes)])
            expect = tuple(int(d) for d in dims.split("x"))
            if arr.shape != expect:
                raise ValueError(f"{path}: parameter {name} shape mismatch")
            params[name] = Tensor(arr, requires_grad=True)
        ckpt = cls(params, config, step)
        if strict:
            expected = {n: t.shape for n, t in init_params(config).params.items()}
            got = {n: t.shape for n, t in params.items()}
            if expected != got:
                raise ValueError(f"{path}: parameter table does not match config")
        return ckpt


def init_params(config: NetworkConfig, seed: Optional[int] = None) -> Checkpoint:
    """Fan-in-scaled uniform weights; gate biases start at +1 (gates open)."""
    rng = np.random.default_rng(config.init_seed if seed is None else seed)
    params: dict[str, Tensor] = {}

    def make_weight(out_c, in_c):
        fan_in = in_c * 9
        limit = np.sqrt(3.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(out_c, in_c, 3, 3)).astype(np.float32)
        return Tensor(w, requires_grad=True)

    for layer in config.gated_layer_table():
        params[f"{layer.name}.feat.w"] = make_weight(layer.out_channels, layer.in_channels)
        params[f"{layer.name}.feat.b"] = Tensor(
            np.zeros(layer.out_channels, dtype=np.float32), requires_grad=True
        )
        params[f"{layer.name}.gate.w"] = make_weight(layer.out_channels, layer.in_channels)
        params[f"{layer.name}.gate.b"] = Tensor(
            np.ones(layer.out_channels, dtype=np.float32), requires_grad=True
        )
    out_spec = config.output_spec()
    params["out.w"] = make_weight(out_spec.out_channels, out_spec.in_channels)
    params["out.b"] = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    return Checkpoint(params, config, step=0)


def assemble_input(
    frame: Union[Tensor, np.ndarray],
    hole: MaskPlane,
    valid: MaskPlane,
    strict: bool = False,
) -> Tensor:
    """Stack the 5 network input channels: R, G, B, hole, validity.

    Hole pixels of the RGB channels are overwritten with neutral grey.
    """
    x = frame if isinstance(frame, Tensor) else Tensor(np.asarray(frame, dtype=np.float32))
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError("frame must have shape [3,H,W]")
    if x.shape[1:] != hole.shape or x.shape[1:] != valid.shape:
        raise ValueError("frame and mask extents differ")
    if strict and (x.data.min() < 0.0 or x.data.max() > 1.0):
        raise ValueError("frame values outside [0,1] in strict mode")
    dtype = x.dtype
    h = hole.bits.astype(dtype)[None]
    keep = Tensor(1.0 - h)
    grey = Tensor(h * dtype.type(NEUTRAL_GREY))
    rgb = T.add(T.mul(x, keep), grey)
    planes = Tensor(np.stack([hole.bits, valid.bits]).astype(dtype))
    return T.concat([rgb, planes], axis=0)


class CompletionNetwork:
    """Bundles a config and its parameters behind encode/decode calls."""

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.config = checkpoint.config
        self._layers = {
            spec.name: GatedConvLayer(
                spec.conv_spec(),
                checkpoint.params[f"{spec.name}.feat.w"],
                checkpoint.params[f"{spec.name}.feat.b"],
                checkpoint.params[f"{spec.name}.gate.w"],
                checkpoint.params[f"{spec.name}.gate.b"],
                spec.activation,
            )
            for spec in self.config.gated_layer_table()
        }

    @classmethod
    def fresh(cls, config: NetworkConfig, seed: Optional[int] = None) -> "CompletionNetwork":
        return cls(init_params(config, seed))

    @property
    def params(self) -> dict[str, Tensor]:
        return self.checkpoint.params

    def astype(self, dtype) -> "CompletionNetwork":
        return CompletionNetwork(self.checkpoint.astype(dtype))

    def dtype(self):
        return next(iter(self.params.values())).dtype

    def encode(
        self,
        frame: Union[Tensor, np.ndarray],
        hole: MaskPlane,
        valid: MaskPlane,
        strict: bool = False,
    ) -> tuple[Tensor, Tensor]:
        """Embed one frame into its key and value maps at 1/4 scale."""
        x5 = assemble_input(frame, hole, valid, strict=strict)
        _, h, w = x5.shape
        if h % 4 or w % 4:
            raise ValueError(f"extents must be divisible by 4, got {h}x{w}")
        x = T.reshape(x5, (1, 5, h, w))
        for spec in self.config.encoder_layers():
            x = gated_conv(x, self._layers[spec.name])
        key = gated_conv(x, self._layers["key_head"])
        value = gated_conv(x, self._layers["value_head"])
        key = T.reshape(key, key.shape[1:])
        value = T.reshape(value, value.shape[1:])
        return key, value

    def decode(self, z: Tensor, peel_feat: MaskPlane) -> Tensor:
        """Reconstruct a [3,4h,4w] frame from the updated value map."""
        if z.ndim != 3 or z.shape[0] != self.config.value_dim:
            raise ValueError(f"value map must be [{self.config.value_dim},h,w]")
        if z.shape[1:] != peel_feat.shape:
            raise ValueError("peel mask extent does not match value map")
        pm = Tensor(peel_feat.bits.astype(z.dtype)[None, None])
        x = T.concat([T.reshape(z, (1,) + z.shape), pm], axis=1)
        x = gated_conv(x, self._layers["dec1"])
        x = gated_conv(x, self._layers["dec2"])
        x = T.upsample_nearest2x(x)
        x = gated_conv(x, self._layers["dec3"])
        x = gated_conv(x, self._layers["dec4"])
        x = T.upsample_nearest2x(x)
        x = gated_conv(x, self._layers["dec5"])
        out = T.sigmoid(T.conv2d(x, self.config.output_spec(), self.params["out.w"], self.params["out.b"]))
        return T.reshape(out, out.shape[1:])
