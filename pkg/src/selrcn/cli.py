"""Command-line interface.

Subcommands: train, eval, ablate, gradcheck, synth-gen, features.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .checkpoint import CheckpointFormatError, checkpoint_load, checkpoint_save
from .datasets import ManifestError, PPMError, load_dataset, read_ppm, synth_generate, write_dataset
from .gradcheck import grad_check
from .pipeline import PipelineError, normalize_frames, resize_short_side
from .resnet import extract_video_features
from .training import (ConfigError, PRESETS, SELRCNModel, SE_GRID, TrainConfig,
                       TrainingDivergedError, ablation_csv, ablation_grid, evaluate,
                       restore_model, train)

GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=("full", "tiny"), default="tiny")
    p.add_argument("--se-spatial", choices=("on", "off"), default="on")
    p.add_argument("--se-temporal", choices=("on", "off"), default="on")
    p.add_argument("--squeeze-axis", choices=("frame", "channel"), default="frame",
                   help="gate granularity: per-frame or per-channel sequence gates")
    p.add_argument("--reweight", choices=("residual", "scale"), default="residual")
    p.add_argument("--layers", type=int, default=None, help="LSTM layer count")
    p.add_argument("--hidden", type=int, default=None, help="LSTM hidden units")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--lr-decay", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=28)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")


def build_parser() -> _Parser:
    parser = _Parser(prog="selrcn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a manifest dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--eval-manifest", default=None,
                   help="held-out manifest; defaults to evaluating on the training set")
    p.add_argument("--out", default=None, help="metrics CSV path")
    p.add_argument("--checkpoint", default=None, help="where to save the final checkpoint")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="per-class accuracy CSV path")

    p = sub.add_parser("ablate", help="train/evaluate a configuration grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--eval-manifest", default=None)
    p.add_argument("--axes", required=True,
                   help="'se' (2x2 SE grid), 'grid' (layers x hidden), or comma-joined "
                        "axis names from {se_spatial,se_temporal,lstm_layers,hidden_units}")
    p.add_argument("--layers-grid", default="2,3,4")
    p.add_argument("--hidden-grid", default="256,512,1024")
    p.add_argument("--out", default=None, help="ablation CSV path")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full composite")
    p.add_argument("--preset", choices=("full", "tiny"), default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample", type=int, default=4,
                   help="coordinates checked per parameter tensor")

    p = sub.add_parser("synth-gen", help="generate a synthetic PPM dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples", type=int, default=40)
    p.add_argument("--frames", type=int, default=10, help="frames per video")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--size", type=int, default=16, help="frame height/width")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("features", help="dump per-frame pooled features as CSV")
    p.add_argument("--frames", default=None, help="directory of frame_*.ppm files")
    p.add_argument("--manifest", default=None)
    p.add_argument("--index", type=int, default=0, help="video index within the manifest")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--preset", choices=("full", "tiny"), default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    return parser


def _config_from_args(args, class_count: int) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch,
        lr_decay=args.lr_decay, dropout=args.dropout, seed=args.seed,
        preset=args.preset, se_spatial=args.se_spatial == "on",
        se_temporal=args.se_temporal == "on", squeeze_axis=args.squeeze_axis,
        reweight=args.reweight, lstm_layers=args.layers, hidden_units=args.hidden,
        class_count=class_count, dtype=args.dtype)


def _load_split(manifest: str):
    samples = load_dataset(manifest)
    if not samples:
        raise ManifestError(f"{manifest}: no videos listed")
    return samples


def _run_train(args) -> int:
    samples = _load_split(args.manifest)
    eval_samples = _load_split(args.eval_manifest) if args.eval_manifest else None
    class_count = max(s.label for s in samples) + 1
    cfg = _config_from_args(args, class_count)
    resume = checkpoint_load(args.resume) if args.resume else None
    ckpt, metrics = train(cfg, samples, eval_samples, resume=resume,
                          log=lambda msg: print(msg, file=sys.stderr))
    csv_text = metrics.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text)
    else:
        print(csv_text, end="")
    if args.checkpoint:
        checkpoint_save(args.checkpoint, ckpt)
    print(f"final eval accuracy: {metrics.final_eval_acc:.4f}", file=sys.stderr)
    return 0


def _run_eval(args) -> int:
    samples = _load_split(args.manifest)
    model = restore_model(checkpoint_load(args.checkpoint))
    result = evaluate(model, samples)
    lines = ["class,accuracy"]
    for c, acc in enumerate(result.per_class):
        lines.append(f"{c},{acc:.10g}")
    lines.append(f"overall,{result.accuracy:.10g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def _parse_axes(args) -> dict:
    tokens = [t.strip() for t in args.axes.split(",") if t.strip()]
    if tokens == ["se"]:
        return dict(SE_GRID)
    if tokens == ["grid"]:
        tokens = ["lstm_layers", "hidden_units"]
    axes: dict[str, list] = {}
    for token in tokens:
        if token in ("se_spatial", "se_temporal"):
            axes[token] = [False, True]
        elif token == "lstm_layers":
            axes[token] = [int(v) for v in args.layers_grid.split(",")]
        elif token == "hidden_units":
            axes[token] = [int(v) for v in args.hidden_grid.split(",")]
        else:
            raise UsageError(f"unknown ablation axis {token!r}")
    return axes


def _run_ablate(args) -> int:
    samples = _load_split(args.manifest)
    eval_samples = _load_split(args.eval_manifest) if args.eval_manifest else None
    class_count = max(s.label for s in samples) + 1
    base = _config_from_args(args, class_count)
    rows = ablation_grid(base, _parse_axes(args), samples, eval_samples,
                         log=lambda msg: print(msg, file=sys.stderr))
    text = ablation_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def _run_gradcheck(args) -> int:
    cfg = TrainConfig(preset=args.preset, seed=args.seed, dtype="float64", dropout=0.0,
                      class_count=3)
    model = SELRCNModel(cfg)
    preset = PRESETS[args.preset]
    rng = np.random.default_rng(args.seed)
    t_len = preset.segment_length
    frames = rng.random((1, t_len, 3, preset.crop, preset.crop))
    labels = np.array([1])

    def loss_fn():
        loss, _ = model.segment_loss(frames, labels, training=True, rng=None)
        return loss

    check_rng = np.random.default_rng(args.seed + 1)
    worst = 0.0
    for name, p in model.named_params().items():
        err = grad_check(lambda t, fn=loss_fn: fn(), p, sample=args.sample, rng=check_rng)
        worst = max(worst, err)
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < GRADCHECK_TOLERANCE else 2


def _run_synth_gen(args) -> int:
    ds = synth_generate(args.classes, args.samples, t_video=args.frames, noise=args.noise,
                        seed=args.seed, frame_size=args.size)
    manifest = write_dataset(args.out, ds.samples)
    (Path(args.out) / "informative.json").write_text(ds.masks_json())
    print(manifest)
    return 0


def _center_preprocess(frames: np.ndarray, preset_name: str) -> np.ndarray:
    preset = PRESETS[preset_name]
    out = []
    for frame in frames:
        resized = resize_short_side(frame, preset.short_side)
        _, h, w = resized.shape
        oy = (h - preset.crop) // 2
        ox = (w - preset.crop) // 2
        out.append(resized[:, oy:oy + preset.crop, ox:ox + preset.crop])
    return normalize_frames(np.stack(out).astype(np.float32))


def _run_features(args) -> int:
    if (args.frames is None) == (args.manifest is None):
        raise UsageError("features needs exactly one of --frames or --manifest")
    if args.frames is not None:
        frame_dir = Path(args.frames)
        paths = sorted(frame_dir.glob("frame_*.ppm"))
        if not paths:
            raise PipelineError(f"no frame_*.ppm files in {frame_dir}")
        frames = np.stack([read_ppm(p) for p in paths])
    else:
        samples = _load_split(args.manifest)
        if not 0 <= args.index < len(samples):
            raise UsageError(f"--index {args.index} outside dataset of {len(samples)} videos")
        frames = samples[args.index].frames
    if args.checkpoint:
        model = restore_model(checkpoint_load(args.checkpoint))
        preset_name = model.cfg.preset
    else:
        model = SELRCNModel(TrainConfig(preset=args.preset, seed=args.seed))
        preset_name = args.preset
    batch = _center_preprocess(frames, preset_name)
    feats = extract_video_features(Tensor(batch), model.resnet).data
    lines = [",".join(f"{v:.8g}" for v in row) for row in feats]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


_DISPATCH = {
    "train": _run_train,
    "eval": _run_eval,
    "ablate": _run_ablate,
    "gradcheck": _run_gradcheck,
    "synth-gen": _run_synth_gen,
    "features": _run_features,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ManifestError, PPMError, PipelineError, ConfigError, CheckpointFormatError,
            TrainingDivergedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
