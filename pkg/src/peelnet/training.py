"""Recursive training forward pass, Adam with the step-decay schedule, and
the outer loop that ties sampling, losses and checkpoints together.

The forward pass mirrors inference but keeps the whole recursion chain in the
autodiff graph: the composition after recursion j feeds recursion j+1, so
late peels backpropagate through every earlier one.  The target's hole is
greyed out before the first recursion so no ground truth can leak through
the composition path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .attention import asym_atten_block
from .driver import RunCounters
from .errors import NonFiniteLossError
from .losses import (
    LossBreakdown,
    PerceptualEmbedder,
    loss_perceptual,
    loss_pixel,
    loss_total,
    loss_tv,
)
from .masks import ALL, ANY, MaskPlane, downsample_mask, get_peel
from .network import NEUTRAL_GREY, Checkpoint, CompletionNetwork, NetworkConfig
from .synth import SceneSampler, TrainSample
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_HEADER = "step, L_peel, L_valid, L_content, L_style, L_tv, total, lr"


@dataclass(frozen=True)
class TrainingConfig:
    image_size: int = 256
    batch_size: int = 4
    learning_rate: float = 1e-4
    decay_interval: int = 100000
    decay_base: float = 10.0
    max_recursions: int = 5
    peel_width: int = 8
    steps: int = 100000
    seed: int = 0
    checkpoint_interval: int = 0  # 0: only the final checkpoint
    embedder_seed: int = 7
    fixed_scene: bool = False
    network: NetworkConfig = field(default_factory=NetworkConfig.paper)

    def __post_init__(self):
        if self.image_size % 8:
            raise ValueError("image size must be divisible by 8")
        if self.batch_size < 1 or self.max_recursions < 1:
            raise ValueError("batch size and recursion limit must be >= 1")

    @classmethod
    def desk_overfit(cls) -> "TrainingConfig":
        """Single fixed scene at 64x64 with the small network; lr stays flat."""
        return cls(
            image_size=64,
            batch_size=1,
            steps=2000,
            decay_interval=2000,
            fixed_scene=True,
            network=NetworkConfig.desk(),
        )

    def schedule(self, t: int) -> float:
        return self.learning_rate * self.decay_base ** (-(t // self.decay_interval))

    def to_text(self) -> str:
        lines = [
            f"image_size = {self.image_size}",
            f"batch_size = {self.batch_size}",
            f"learning_rate = {self.learning_rate!r}",
            f"decay_interval = {self.decay_interval}",
            f"decay_base = {self.decay_base!r}",
            f"max_recursions = {self.max_recursions}",
            f"peel_width = {self.peel_width}",
            f"steps = {self.steps}",
            f"seed = {self.seed}",
            f"checkpoint_interval = {self.checkpoint_interval}",
            f"embedder_seed = {self.embedder_seed}",
            f"fixed_scene = {int(self.fixed_scene)}",
            f"net_base_channels = {self.network.base_channels}",
            f"net_key_dim = {self.network.key_dim}",
            f"net_value_dim = {self.network.value_dim}",
            f"net_activation = {self.network.activation}",
            f"net_init_seed = {self.network.init_seed}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingConfig":
        values: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
        net = NetworkConfig(
            base_channels=int(values.pop("net_base_channels")),
            key_dim=int(values.pop("net_key_dim")),
            value_dim=int(values.pop("net_value_dim")),
            activation=values.pop("net_activation"),
            init_seed=int(values.pop("net_init_seed")),
        )
        kwargs = {}
        for key, val in values.items():
            if key in ("learning_rate", "decay_base"):
                kwargs[key] = float(val)
            elif key == "fixed_scene":
                kwargs[key] = bool(int(val))
            else:
                kwargs[key] = int(val)
        return cls(network=net, **kwargs)


def make_sampler(
    config: TrainingConfig,
    image_dir: Optional[str] = None,
    mask_dir: Optional[str] = None,
) -> SceneSampler:
    return SceneSampler(
        size=(config.image_size, config.image_size),
        seed=config.seed,
        image_dir=image_dir,
        mask_dir=mask_dir,
        fixed=config.fixed_scene,
    )


def forward_train(
    sample: TrainSample,
    model: CompletionNetwork,
    max_recursions: int = 5,
    peel_width: int = 8,
    counters: Optional[RunCounters] = None,
) -> tuple[list[Tensor], list[Tensor], list[MaskPlane]]:
    """Run the fill loop with gradients on; returns (raws, composeds, peels).

    Holes deeper than max_recursions peels are left partially unfilled; the
    loss simply sees fewer terms.  References are encoded inside the graph so
    their encoder weights train too.
    """
    refs = []
    for i in range(1, len(sample.frames)):
        key, value = model.encode(sample.frames[i], sample.holes[i], sample.valids[i])
        if counters is not None:
            counters.encoder_passes += 1
            counters.reference_encodes += 1
        refs.append((key, value, downsample_mask(sample.valids[i], 4, ALL)))

    hole = sample.holes[0]
    valid = sample.valids[0]
    grey = np.where(hole.bits[None], np.float32(NEUTRAL_GREY), sample.frames[0])
    x = Tensor(grey.astype(np.float32))

    raws: list[Tensor] = []
    composeds: list[Tensor] = []
    peels: list[MaskPlane] = []
    for _ in range(max_recursions):
        if hole.is_empty():
            break
        peel = get_peel(hole, peel_width)
        q, r = model.encode(x, hole, valid)
        if counters is not None:
            counters.encoder_passes += 1
        peel_feat = downsample_mask(peel, 4, ANY)
        z = asym_atten_block(
            q, r, peel_feat,
            [k for k, _, _ in refs],
            [v for _, v, _ in refs],
            [vf for _, _, vf in refs],
            counters=counters,
        )
        raw = model.decode(z, peel_feat)
        keep = Tensor((~peel).bits.astype(np.float32)[None])
        fill = Tensor(peel.bits.astype(np.float32)[None])
        x = T.add(T.mul(x, keep), T.mul(raw, fill))
        hole = hole - peel
        if counters is not None:
            counters.recursions += 1
        raws.append(raw)
        composeds.append(x)
        peels.append(peel)
    return raws, composeds, peels


def sample_losses(
    sample: TrainSample,
    model: CompletionNetwork,
    embedder: PerceptualEmbedder,
    config: TrainingConfig,
) -> LossBreakdown:
    raws, composeds, peels = forward_train(
        sample, model, config.max_recursions, config.peel_width
    )
    l_peel, l_valid = loss_pixel(raws, peels, sample.valids[0], sample.ground_truth)
    l_content, l_style = loss_perceptual(composeds, sample.ground_truth, embedder)
    l_tv = loss_tv(composeds)
    return loss_total(l_peel, l_valid, l_content, l_style, l_tv)


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam; parameters are updated in place."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def train_loop(
    config: TrainingConfig,
    sampler: Optional[SceneSampler] = None,
    steps: Optional[int] = None,
    out_dir: Optional[Path] = None,
    model: Optional[CompletionNetwork] = None,
) -> tuple[Checkpoint, list[str]]:
    """Synth batch, forward, backward, Adam; returns checkpoint + log lines.

    A non-finite total aborts the run: the last good checkpoint is saved (if
    an output directory was given) and NonFiniteLossError propagates.
    """
    steps = config.steps if steps is None else steps
    sampler = sampler if sampler is not None else make_sampler(config)
    model = model if model is not None else CompletionNetwork.fresh(config.network)
    embedder = PerceptualEmbedder(config.embedder_seed)
    state = AdamState()
    rows = [LOG_HEADER]
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "loss_log.txt"
        log_path.write_text(LOG_HEADER + "\n")

    def emit(line: str) -> None:
        rows.append(line)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(line + "\n")

    for t in range(steps):
        lr = config.schedule(t)
        for p in model.params.values():
            p.zero_grad()
        sums = dict.fromkeys(
            ("L_peel", "L_valid", "L_content", "L_style", "L_tv", "total"), 0.0
        )
        for _ in range(config.batch_size):
            breakdown = sample_losses(sampler.draw(), model, embedder, config)
            share = T.div(breakdown.total, Tensor(np.float32(config.batch_size)))
            if not np.isfinite(share.data).all():
                if out_dir is not None:
                    model.checkpoint.step = t
                    model.checkpoint.save(out_dir / "abort.ckpt")
                raise NonFiniteLossError(f"total loss diverged at step {t}")
            share.backward()
            for key, val in breakdown.as_floats().items():
                sums[key] += val / config.batch_size
        adam_step(model.params, state, lr)
        emit(
            f"{t}, {sums['L_peel']:.6g}, {sums['L_valid']:.6g}, "
            f"{sums['L_content']:.6g}, {sums['L_style']:.6g}, {sums['L_tv']:.6g}, "
            f"{sums['total']:.6g}, {lr:.6g}"
        )
        if (
            out_dir is not None
            and config.checkpoint_interval
            and (t + 1) % config.checkpoint_interval == 0
        ):
            model.checkpoint.step = t + 1
            model.checkpoint.save(out_dir / f"ckpt_{t + 1:07d}.ckpt")
    model.checkpoint.step = steps
    if out_dir is not None:
        model.checkpoint.save(out_dir / "final.ckpt")
    return model.checkpoint, rows
