"""Command-line surface: completion, training, evaluation, and diagnostics.

Every command that owns an output directory writes a JSON manifest there,
even when it fails partway (the manifest then carries an `error` field), so
batch runs can always be audited afterwards.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .attention import dump_scores
from .driver import (
    CompletionOptions,
    EncodedReference,
    FrameSet,
    RunCounters,
    complete_image,
    complete_video,
    encode_reference,
)
from .errors import SynthesisError
from .imgio import list_frames, load_frame, load_mask, save_frame, save_mask
from .masks import MaskPlane
from .metrics import psnr, ssim
from .network import Checkpoint, CompletionNetwork, NetworkConfig
from .synth import SceneSampler
from .training import TrainingConfig, make_sampler, train_loop
from .verify import TOLERANCE, run_all


def _worker_budget() -> int:
    """OPN_THREADS bounds fan-out; this build completes frames sequentially."""
    try:
        return max(1, int(os.environ.get("OPN_THREADS", "1")))
    except ValueError:
        return 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--peel-width", type=int, default=8)
    p.add_argument("--ref-stride", type=int, default=5)
    p.add_argument("--one-shot", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--checkpoint", type=Path, default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peelnet",
        description="Peel-by-peel image/video completion with reference attention",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", help="fill holes in frames")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--masks", type=Path, default=None)
    p.add_argument("--refs", type=Path, default=None,
                   help="reference image directory; enables image mode")
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("train", help="train a completion model")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--config", type=Path, default=None,
                   help="training config text file; overrides the preset")
    p.add_argument("--image-dir", type=Path, default=None)
    p.add_argument("--mask-dir", type=Path, default=None)
    _add_common(p)

    p = sub.add_parser("eval", help="PSNR/SSIM of predictions vs ground truth")
    p.add_argument("--frames", type=Path, required=True, help="prediction directory")
    p.add_argument("--refs", type=Path, required=True, help="ground-truth directory")
    p.add_argument("--out", type=Path, default=None)
    _add_common(p)

    p = sub.add_parser("gradcheck", help="run the finite-difference suites")
    _add_common(p)

    p = sub.add_parser("synth", help="emit synthetic training samples")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=4)
    _add_common(p)

    p = sub.add_parser("attn-dump", help="export attention scores per recursion")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--masks", type=Path, required=True)
    p.add_argument("--refs", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    return parser


def _load_model(args) -> CompletionNetwork:
    if args.checkpoint is not None:
        return CompletionNetwork(Checkpoint.load(args.checkpoint, strict=args.strict))
    config = NetworkConfig.desk() if args.preset == "desk" else NetworkConfig.paper()
    return CompletionNetwork.fresh(replace(config, init_seed=args.seed))


def _mask_for(masks_dir: Optional[Path], frame_path: Path, hw, strict: bool) -> MaskPlane:
    if masks_dir is not None:
        for candidate in (masks_dir / frame_path.name, masks_dir / (frame_path.stem + ".png")):
            if candidate.exists():
                mask = load_mask(candidate, strict=strict)
                if mask.shape != hw:
                    raise ValueError(f"{candidate}: mask extent {mask.shape} != frame {hw}")
                return mask
    return MaskPlane.zeros(*hw)


def _load_frameset(frames_dir: Path, masks_dir: Optional[Path], strict: bool):
    paths = list_frames(frames_dir)
    frames, holes, valids = [], [], []
    for path in paths:
        frame = load_frame(path)
        hole = _mask_for(masks_dir, path, frame.shape[1:], strict)
        frames.append(frame)
        holes.append(hole)
        valids.append(~hole)
    return FrameSet(frames, holes, valids), [p.name for p in paths]


def _options(args) -> CompletionOptions:
    return CompletionOptions(
        peel_width=args.peel_width,
        ref_stride=args.ref_stride,
        one_shot=args.one_shot,
        strict=args.strict,
    )


def _write_manifest(out_dir: Path, manifest: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _encode_pool(args, model: CompletionNetwork, counters: RunCounters) -> list[EncodedReference]:
    pool: list[EncodedReference] = []
    for i, path in enumerate(list_frames(args.refs)):
        frame = load_frame(path)
        hole = _mask_for(args.masks, path, frame.shape[1:], args.strict)
        pool.append(encode_reference(i, frame, hole, ~hole, model, counters))
    return pool


def _cmd_complete(args) -> int:
    manifest = {
        "command": "complete",
        "options": {
            "peel_width": args.peel_width,
            "ref_stride": args.ref_stride,
            "one_shot": args.one_shot,
            "strict": args.strict,
            "checkpoint": str(args.checkpoint) if args.checkpoint else None,
            "preset": args.preset,
            "threads": _worker_budget(),
        },
        "frames": [],
        "error": None,
    }
    try:
        model = _load_model(args)
        opts = _options(args)
        args.out.mkdir(parents=True, exist_ok=True)
        if args.refs is not None:
            counters = RunCounters()
            pool = _encode_pool(args, model, counters)
            targets = list_frames(args.frames)
            for path in targets:
                frame = load_frame(path)
                hole = _mask_for(args.masks, path, frame.shape[1:], args.strict)
                started = time.perf_counter()
                done, trace = complete_image(frame, hole, ~hole, pool, model, opts, counters)
                save_frame(args.out / path.name, done)
                manifest["frames"].append(
                    {
                        "frame": path.name,
                        "recursions": trace["recursions"],
                        "fallbacks": trace["fallbacks"],
                        "seconds": time.perf_counter() - started,
                    }
                )
        else:
            frameset, names = _load_frameset(args.frames, args.masks, args.strict)
            completed, reports = complete_video(frameset, model, opts)
            for name, frame, report in zip(names, completed.frames, reports):
                save_frame(args.out / name, frame)
                report = dict(report)
                report["frame"] = name
                manifest["frames"].append(report)
        return 0
    except Exception as e:
        manifest["error"] = f"{type(e).__name__}: {e}"
        raise
    finally:
        _write_manifest(args.out, manifest)


def _cmd_train(args) -> int:
    if args.config is not None:
        config = TrainingConfig.from_text(args.config.read_text())
    elif args.preset == "desk":
        config = TrainingConfig.desk_overfit()
    else:
        config = TrainingConfig()
    if args.seed:
        config = replace(config, seed=args.seed)
    if args.steps is not None:
        config = replace(config, steps=args.steps)
    manifest = {
        "command": "train",
        "options": {"config": config.to_text(), "threads": _worker_budget()},
        "error": None,
    }
    try:
        sampler = make_sampler(
            config,
            image_dir=str(args.image_dir) if args.image_dir else None,
            mask_dir=str(args.mask_dir) if args.mask_dir else None,
        )
        checkpoint, rows = train_loop(config, sampler, out_dir=args.out)
        (args.out / "train_config.txt").write_text(config.to_text())
        manifest["steps"] = checkpoint.step
        manifest["final_loss_line"] = rows[-1] if len(rows) > 1 else None
        return 0
    except Exception as e:
        manifest["error"] = f"{type(e).__name__}: {e}"
        raise
    finally:
        _write_manifest(args.out, manifest)


def _cmd_eval(args) -> int:
    preds = {p.stem: p for p in list_frames(args.frames)}
    gts = {p.stem: p for p in list_frames(args.refs)}
    shared = sorted(set(preds) & set(gts))
    if not shared:
        raise FileNotFoundError("no filename overlap between prediction and truth dirs")
    rows = []
    scores = []
    for stem in shared:
        a = load_frame(preds[stem])
        b = load_frame(gts[stem])
        p, s = psnr(a, b), ssim(a, b)
        scores.append((p, s))
        rows.append(f"{stem}  PSNR {p:6.2f}  SSIM {s:6.4f}  VFID n/a")
    mean_p = float(np.mean([p for p, _ in scores]))
    mean_s = float(np.mean([s for _, s in scores]))
    rows.append(f"mean  PSNR {mean_p:6.2f}  SSIM {mean_s:6.4f}  VFID n/a")
    table = "\n".join(rows)
    print(table)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "metrics.txt").write_text(table + "\n")
        _write_manifest(
            args.out,
            {
                "command": "eval",
                "pairs": len(shared),
                "psnr_mean": mean_p,
                "ssim_mean": mean_s,
                "vfid": "n/a",
                "error": None,
            },
        )
    return 0


def _cmd_gradcheck(_args) -> int:
    results = run_all()
    return 0 if all(err < TOLERANCE for err in results.values()) else 1


def _cmd_synth(args) -> int:
    manifest = {"command": "synth", "count": args.count, "seed": args.seed, "error": None}
    size = 64 if args.preset == "desk" else 256
    try:
        sampler = SceneSampler(size=(size, size), seed=args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        for k in range(args.count):
            sample = sampler.draw()
            sample_dir = args.out / f"sample_{k:03d}"
            sample_dir.mkdir(exist_ok=True)
            for i, (frame, hole) in enumerate(zip(sample.frames, sample.holes)):
                save_frame(sample_dir / f"frame_{i}.png", frame)
                save_mask(sample_dir / f"mask_{i}.png", hole)
            save_frame(sample_dir / "truth.png", sample.ground_truth)
        return 0
    except Exception as e:
        manifest["error"] = f"{type(e).__name__}: {e}"
        raise
    finally:
        _write_manifest(args.out, manifest)


def _cmd_attn_dump(args) -> int:
    manifest = {"command": "attn-dump", "recursions": 0, "error": None}
    try:
        model = _load_model(args)
        opts = _options(args)
        counters = RunCounters()
        args.out.mkdir(parents=True, exist_ok=True)
        target_path = list_frames(args.frames)[0]
        frame = load_frame(target_path)
        hole = _mask_for(args.masks, target_path, frame.shape[1:], args.strict)
        if args.refs is not None:
            pool = _encode_pool(args, model, counters)
        else:
            raise FileNotFoundError("attn-dump needs --refs with reference images")
        state = {"j": 0}

        def hook(scores, rows, cols):
            dump_scores(args.out / f"scores_r{state['j']}", scores, rows, cols)
            state["j"] += 1

        _, trace = complete_image(
            frame, hole, ~hole, pool, model, opts, counters, score_hook=hook
        )
        manifest["recursions"] = trace["recursions"]
        manifest["frame"] = target_path.name
        return 0
    except Exception as e:
        manifest["error"] = f"{type(e).__name__}: {e}"
        raise
    finally:
        _write_manifest(args.out, manifest)


_HANDLERS = {
    "complete": _cmd_complete,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
    "attn-dump": _cmd_attn_dump,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (FileNotFoundError, NotADirectoryError, PermissionError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError, SynthesisError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
