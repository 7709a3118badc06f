"""Finite-difference verification suites for every differentiable stage.

Each check builds a tiny float64 instance of one component, compares analytic
gradients against central differences through `tensor.grad_check`, and
returns the worst relative error.  The CLI `gradcheck` subcommand and the
test suite both run these.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .attention import asym_atten_block
from .losses import PerceptualEmbedder, loss_perceptual, loss_pixel, loss_total, loss_tv
from .masks import MaskPlane
from .network import (
    Checkpoint,
    CompletionNetwork,
    ConvSpec,
    GatedConvLayer,
    NetworkConfig,
    gated_conv,
    init_params,
)
from .synth import SceneSampler
from .tensor import Tensor, grad_check
from .training import TrainingConfig, sample_losses

TOLERANCE = 1e-3
EPS = 1e-5


def _f64_embedder(seed: int = 3) -> PerceptualEmbedder:
    emb = PerceptualEmbedder(seed=seed)
    emb.params = {k: Tensor(v.data.astype(np.float64)) for k, v in emb.params.items()}
    return emb


def _mask_from(rng: np.random.Generator, h: int, w: int, frac: float) -> MaskPlane:
    bits = rng.random((h, w)) < frac
    if not bits.any():
        bits[h // 2, w // 2] = True
    return MaskPlane(bits)


def check_gated_conv() -> float:
    rng = np.random.default_rng(0)
    spec = ConvSpec(2, 3, 3, padding=1)
    wf = rng.normal(0, 0.5, (3, 2, 3, 3))
    bf = rng.normal(0, 0.5, 3)
    wg = rng.normal(0, 0.5, (3, 2, 3, 3))
    bg = rng.normal(0, 0.5, 3)
    x0 = rng.normal(0, 1.0, (1, 2, 5, 5))

    def layer_with(wf_t: Tensor) -> GatedConvLayer:
        return GatedConvLayer(spec, wf_t, Tensor(bf), Tensor(wg), Tensor(bg), "elu")

    def over_input(x: Tensor) -> Tensor:
        return T.tensor_sum(gated_conv(x, layer_with(Tensor(wf))))

    def over_weight(w: Tensor) -> Tensor:
        return T.tensor_sum(gated_conv(Tensor(x0), layer_with(w)))

    return max(grad_check(over_input, x0, EPS), grad_check(over_weight, wf, EPS))


def check_attention() -> float:
    rng = np.random.default_rng(1)
    ck, cv, h, w = 3, 4, 4, 4
    peel = _mask_from(rng, h, w, 0.3)
    valids = [_mask_from(rng, h, w, 0.6) for _ in range(2)]
    q0 = rng.normal(0, 1.0, (ck, h, w))
    r0 = rng.normal(0, 1.0, (cv, h, w))
    keys = [rng.normal(0, 1.0, (ck, h, w)) for _ in range(2)]
    values = [rng.normal(0, 1.0, (cv, h, w)) for _ in range(2)]

    def block(q, r, ks, vs) -> Tensor:
        out = asym_atten_block(q, r, peel, ks, vs, valids)
        return T.tensor_sum(T.mul(out, out))

    errs = [
        grad_check(lambda t: block(t, Tensor(r0), [Tensor(k) for k in keys],
                                   [Tensor(v) for v in values]), q0, EPS),
        grad_check(lambda t: block(Tensor(q0), t, [Tensor(k) for k in keys],
                                   [Tensor(v) for v in values]), r0, EPS),
        grad_check(lambda t: block(Tensor(q0), Tensor(r0), [t, Tensor(keys[1])],
                                   [Tensor(v) for v in values]), keys[0], EPS),
        grad_check(lambda t: block(Tensor(q0), Tensor(r0), [Tensor(k) for k in keys],
                                   [t, Tensor(values[1])]), values[0], EPS),
    ]
    return max(errs)


def _tiny_model_fn(
    config: NetworkConfig, base: Checkpoint, name: str, scalar_of: Callable
) -> Callable:
    def fn(leaf: Tensor) -> Tensor:
        params = dict(base.params)
        params[name] = leaf
        return scalar_of(CompletionNetwork(Checkpoint(params, config, 0)))

    return fn


def check_decoder() -> float:
    rng = np.random.default_rng(2)
    config = NetworkConfig.tiny()
    base = init_params(config, seed=5).astype(np.float64)
    z0 = rng.normal(0, 1.0, (config.value_dim, 4, 4))
    peel = _mask_from(rng, 4, 4, 0.4)

    def decode_sum(model: CompletionNetwork, z: Tensor) -> Tensor:
        return T.tensor_sum(model.decode(z, peel))

    def over_z(z: Tensor) -> Tensor:
        return decode_sum(CompletionNetwork(base), z)

    fn_w = _tiny_model_fn(config, base, "dec1.feat.w",
                          lambda m: decode_sum(m, Tensor(z0)))
    return max(grad_check(over_z, z0, EPS), grad_check(fn_w, base.params["dec1.feat.w"].data, EPS))


def check_encoder() -> float:
    rng = np.random.default_rng(6)
    config = NetworkConfig.tiny()
    base = init_params(config, seed=5).astype(np.float64)
    frame = rng.random((3, 8, 8))
    hole = _mask_from(rng, 8, 8, 0.2)
    valid = MaskPlane(~hole.bits)

    def encode_sum(model: CompletionNetwork) -> Tensor:
        key, value = model.encode(frame, hole, valid)
        return T.add(T.tensor_sum(T.mul(key, key)), T.tensor_sum(T.mul(value, value)))

    errs = []
    for name in ("enc1.feat.w", "enc4.gate.b", "key_head.feat.w"):
        fn = _tiny_model_fn(config, base, name, encode_sum)
        errs.append(grad_check(fn, base.params[name].data, EPS))
    return max(errs)


def check_losses() -> dict[str, float]:
    rng = np.random.default_rng(4)
    shape = (3, 8, 8)
    truth = rng.random(shape)
    x0 = rng.random(shape)
    # TV needs every pixel to be a strict local extremum, otherwise opposing
    # sign terms cancel to an exact zero gradient and the relative-error
    # denominator floor amplifies finite-difference noise.
    board = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.float64)
    x_tv = 0.3 + 0.4 * board[None] + rng.uniform(-0.05, 0.05, shape)
    peel = _mask_from(rng, 8, 8, 0.3)
    valid = MaskPlane(~peel.bits)
    embedder = _f64_embedder()

    def pixel_fn(x: Tensor) -> Tensor:
        lp, lv = loss_pixel([x], [peel], valid, Tensor(truth))
        return T.add(lp, lv)

    def perceptual_fn(x: Tensor) -> Tensor:
        lc, ls = loss_perceptual([x], Tensor(truth), embedder)
        return T.add(lc, ls)

    def tv_fn(x: Tensor) -> Tensor:
        return loss_tv([x])

    def total_fn(x: Tensor) -> Tensor:
        lp, lv = loss_pixel([x], [peel], valid, Tensor(truth))
        lc, ls = loss_perceptual([x], Tensor(truth), embedder)
        return loss_total(lp, lv, lc, ls, loss_tv([x])).total

    return {
        "loss_pixel": grad_check(pixel_fn, x0, EPS),
        "loss_perceptual": grad_check(perceptual_fn, x0, EPS),
        "loss_tv": grad_check(tv_fn, x_tv, EPS),
        "loss_total": grad_check(total_fn, x_tv, EPS),
    }


def check_train_step() -> float:
    """Whole-pipeline gradient: params -> recursion chain -> total loss."""
    config = TrainingConfig(
        image_size=16,
        batch_size=1,
        peel_width=2,
        steps=1,
        decay_interval=1,
        network=NetworkConfig.tiny(),
    )
    sampler = SceneSampler(size=(16, 16), seed=1, fixed=True, scene_margin=8)
    sample = sampler.draw()
    embedder = _f64_embedder()
    base = init_params(config.network, seed=5).astype(np.float64)

    errs = []
    for name in ("out.b", "enc1.gate.b"):
        fn = _tiny_model_fn(
            config.network, base, name,
            lambda m: sample_losses(sample, m, embedder, config).total,
        )
        errs.append(grad_check(fn, base.params[name].data, EPS))
    return max(errs)


def run_all(report: Callable[[str], None] = print) -> dict[str, float]:
    """Run every suite; returns name -> max relative error."""
    results: dict[str, float] = {}
    results["gated_conv"] = check_gated_conv()
    results["attention_block"] = check_attention()
    results["encoder"] = check_encoder()
    results["decoder"] = check_decoder()
    results.update(check_losses())
    results["train_step"] = check_train_step()
    for name, err in results.items():
        verdict = "PASS" if err < TOLERANCE else "FAIL"
        report(f"gradcheck {name}: max_rel_err={err:.3e} {verdict}")
    return results
