"""End-to-end training and evaluation of the recalibrated CNN+LSTM classifier.

A segment batch flows frames -> residual CNN -> pooled feature sequences ->
gated LSTM stack -> per-frame logits -> cross-entropy averaged over frames.
Every random stream (init, shuffling, augmentation, dropout) derives from
(seed, epoch, index) so a fixed seed reproduces metrics byte for byte and
resuming from a checkpoint matches the uninterrupted run.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, asdict, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .checkpoint import Checkpoint
from .lstm import ClassifierHead, SELSTM, SELSTMConfig, late_fuse
from .optim import Adam
from .pipeline import (AugmentConfig, Segment, SegmentSpec, VideoSample, augment_segment,
                       segment_rng, segment_video)
from .resnet import SEResNet, resnet34_config, tiny_config
from .se import SEConfig


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message names the epoch and batch."""


class ConfigError(ValueError):
    pass


# Gate granularity (CLI vocabulary) -> axis the squeeze reduces (SEConfig
# vocabulary): per-frame gates average across channels and vice versa.
_GATE_AXIS = {"frame": "channel", "channel": "time"}
_REWEIGHT = {"residual": "residual", "scale": "scale_only"}


@dataclass(frozen=True)
class Preset:
    name: str
    lstm_layers: int
    hidden_units: int
    segment_length: int
    segment_stride: int
    short_side: int
    crop: int
    se_reduction_spatial: int
    se_reduction_temporal: int

    def resnet_config(self, se_enabled: bool):
        cfg = resnet34_config(se_enabled) if self.name == "full" else tiny_config(se_enabled)
        return replace(cfg, se_reduction=self.se_reduction_spatial)

    def segment_spec(self) -> SegmentSpec:
        return SegmentSpec(length=self.segment_length, stride=self.segment_stride)

    def augment(self, mode: str) -> AugmentConfig:
        return AugmentConfig(short_side=self.short_side, crop=self.crop, mode=mode)


PRESETS = {
    "full": Preset(name="full", lstm_layers=3, hidden_units=1024, segment_length=30,
                   segment_stride=15, short_side=256, crop=224,
                   se_reduction_spatial=16, se_reduction_temporal=16),
    # desk scale: all mechanisms exercised, minutes not days
    "tiny": Preset(name="tiny", lstm_layers=2, hidden_units=32, segment_length=10,
                   segment_stride=5, short_side=16, crop=16,
                   se_reduction_spatial=16, se_reduction_temporal=2),
}


@dataclass
class TrainConfig:
    epochs: int = 16
    learning_rate: float = 1e-5
    batch_size: int = 28
    lr_decay: float = 0.9
    dropout: float = 0.5
    seed: int = 0
    preset: str = "tiny"
    se_spatial: bool = True
    se_temporal: bool = True
    squeeze_axis: str = "frame"     # gate granularity: frame | channel
    reweight: str = "residual"      # residual | scale
    lstm_layers: int | None = None
    hidden_units: int | None = None
    class_count: int = 2
    dtype: str = "float32"
    supervision: str = "all_frames"  # all_frames | final_frame
    fusion: str = "mean"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.squeeze_axis not in _GATE_AXIS:
            raise ConfigError(f"squeeze_axis must be frame or channel, got {self.squeeze_axis!r}")
        if self.reweight not in _REWEIGHT:
            raise ConfigError(f"reweight must be residual or scale, got {self.reweight!r}")
        if self.supervision not in ("all_frames", "final_frame"):
            raise ConfigError(f"unknown supervision mode {self.supervision!r}")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        for name in ("epochs", "batch_size", "class_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def preset_spec(self) -> Preset:
        return PRESETS[self.preset]

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def layers(self) -> int:
        return self.lstm_layers if self.lstm_layers is not None else self.preset_spec.lstm_layers

    def hidden(self) -> int:
        return self.hidden_units if self.hidden_units is not None else self.preset_spec.hidden_units

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: float
    learning_rate: float


@dataclass
class Metrics:
    epochs: list[EpochStats] = field(default_factory=list)
    per_class: np.ndarray | None = None
    wall_time: float = 0.0

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,eval_acc"]
        for row in self.epochs:
            lines.append(f"{row.epoch},{row.train_loss:.10g},{row.train_acc:.10g},"
                         f"{row.eval_acc:.10g}")
        return "\n".join(lines) + "\n"

    @property
    def final_eval_acc(self) -> float:
        return self.epochs[-1].eval_acc if self.epochs else float("nan")


class SELRCNModel:
    """CNN feature extractor + gated LSTM + linear head, built from one config."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        preset = cfg.preset_spec
        dtype = cfg.np_dtype
        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 0xC0FFEE])
        self.resnet = SEResNet(preset.resnet_config(cfg.se_spatial), rng, dtype)
        se_cfg = SEConfig(reduction_ratio=preset.se_reduction_temporal,
                          squeeze_axis=_GATE_AXIS[cfg.squeeze_axis],
                          reweight_mode=_REWEIGHT[cfg.reweight])
        lstm_cfg = SELSTMConfig(layers=cfg.layers(), hidden=cfg.hidden(),
                                dropout=cfg.dropout, se_enabled=cfg.se_temporal,
                                se_cfg=se_cfg, class_count=cfg.class_count,
                                input_dim=self.resnet.cfg.feature_dim)
        self.selstm = SELSTM(lstm_cfg, rng, dtype)
        self.selstm.init_gate(t_len=preset.segment_length,
                              c_len=self.resnet.cfg.feature_dim, rng=rng)
        self.head = ClassifierHead(cfg.hidden(), cfg.class_count, rng, dtype)

    def named_params(self) -> dict[str, Tensor]:
        params = {f"resnet.{k}": v for k, v in self.resnet.named_params().items()}
        params.update({f"lstm.{k}": v for k, v in self.selstm.named_params().items()})
        params.update(self.head.named_params("head"))
        return params

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"resnet.{k}": v for k, v in self.resnet.named_buffers().items()}

    def forward_segments(self, frames: np.ndarray, training: bool,
                         rng: np.random.Generator | None = None) -> Tensor:
        """Per-frame logits for a (B, T, 3, h, w) batch, flattened to (B*T, K)."""
        b, t = frames.shape[:2]
        flat = Tensor(frames.reshape((b * t,) + frames.shape[2:]), dtype=self.cfg.np_dtype)
        feats = self.resnet.forward(flat, training)
        seq = ad.reshape(feats, (b, t, self.resnet.cfg.feature_dim))
        hidden = self.selstm.forward(seq, training=training, rng=rng)
        hidden = ad.dropout(hidden, self.cfg.dropout, rng, training)
        return self.head.logits(ad.reshape(hidden, (b * t, self.cfg.hidden())))

    def segment_loss(self, frames: np.ndarray, labels: np.ndarray, training: bool,
                     rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
        """Cross-entropy over supervised frames plus per-segment fused probabilities."""
        b, t = frames.shape[:2]
        logits = self.forward_segments(frames, training, rng)
        probs3 = _softmax_np(logits.data.reshape(b, t, -1))
        if self.cfg.supervision == "all_frames":
            loss = ad.cross_entropy(logits, np.repeat(labels, t))
        else:
            last = ad.take(ad.reshape(logits, (b, t, -1)), t - 1, axis=1)
            loss = ad.cross_entropy(last, labels)
        return loss, probs3.mean(axis=1)

    def temporal_gate(self, frames: np.ndarray) -> np.ndarray:
        """Evaluation-mode excitation weights for one segment's frames (T, 3, h, w)."""
        feats = self.resnet.forward(Tensor(frames, dtype=self.cfg.np_dtype), training=False)
        return self.selstm.gate_values(feats).data


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray
    predictions: dict[str, int]
    fused: dict[str, np.ndarray]


def evaluate(model: SELRCNModel, samples: Sequence[VideoSample]) -> EvalResult:
    """Video-level accuracy: fuse frames per segment, average segments per video,
    argmax with lowest-index tie break."""
    cfg = model.cfg
    preset = cfg.preset_spec
    spec = preset.segment_spec()
    aug = preset.augment("test")
    tagged: list[tuple[str, Segment]] = []
    labels: dict[str, int] = {}
    for video in samples:
        labels[video.id] = video.label
        for seg in segment_video(video, spec):
            tagged.append((video.id, seg))

    fused_by_video: dict[str, list[np.ndarray]] = {v.id: [] for v in samples}
    chunk = max(1, cfg.batch_size)
    for i in range(0, len(tagged), chunk):
        group = tagged[i:i + chunk]
        frames = np.stack([augment_segment(seg, aug) for _, seg in group])
        b, t = frames.shape[:2]
        logits = model.forward_segments(frames, training=False)
        probs = _softmax_np(logits.data.reshape(b, t, -1))
        for j, (vid, _) in enumerate(group):
            fused_by_video[vid].append(late_fuse(probs[j], mode=cfg.fusion))

    predictions: dict[str, int] = {}
    fused: dict[str, np.ndarray] = {}
    correct_per_class = np.zeros(cfg.class_count, dtype=np.int64)
    count_per_class = np.zeros(cfg.class_count, dtype=np.int64)
    for vid, parts in fused_by_video.items():
        dist = np.mean(np.stack(parts), axis=0)
        pred = int(np.argmax(dist))  # np.argmax keeps the lowest index on ties
        predictions[vid] = pred
        fused[vid] = dist
        label = labels[vid]
        count_per_class[label] += 1
        if pred == label:
            correct_per_class[label] += 1
    total = count_per_class.sum()
    accuracy = float(correct_per_class.sum() / total) if total else 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(count_per_class > 0,
                             correct_per_class / np.maximum(count_per_class, 1), 0.0)
    return EvalResult(accuracy=accuracy, per_class=per_class, predictions=predictions,
                      fused=fused)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def build_checkpoint(model: SELRCNModel, opt: Adam, epoch: int) -> Checkpoint:
    params = {name: p.data.copy() for name, p in model.named_params().items()}
    params.update({name: b.copy() for name, b in model.named_buffers().items()})
    moments: dict[str, np.ndarray] = {}
    for (name, _), m, v in zip(model.named_params().items(), opt.state.m, opt.state.v):
        moments[f"m.{name}"] = m.copy()
        moments[f"v.{name}"] = v.copy()
    return Checkpoint(params=params, opt_moments=moments, step=opt.state.step,
                      config=model.cfg.to_dict(), epoch=epoch)


def restore_model(ckpt: Checkpoint, cfg: TrainConfig | None = None) -> SELRCNModel:
    """Rebuild a model from a checkpoint (config echo by default)."""
    cfg = cfg or TrainConfig.from_dict(ckpt.config)
    model = SELRCNModel(cfg)
    load_weights(model, ckpt)
    return model


def load_weights(model: SELRCNModel, ckpt: Checkpoint) -> None:
    params = model.named_params()
    buffers = model.named_buffers()
    for name, p in params.items():
        if name not in ckpt.params:
            raise ConfigError(f"checkpoint is missing tensor {name!r}")
        saved = ckpt.params[name]
        if saved.shape != p.data.shape:
            raise ConfigError(f"tensor {name!r} shape {saved.shape} != model {p.data.shape}")
        p.data = saved.astype(p.data.dtype, copy=True)
    saved_buffers = {k: v for k, v in ckpt.params.items() if k in buffers}
    model.resnet.load_buffers({k[len("resnet."):]: v.astype(model.cfg.np_dtype)
                               for k, v in saved_buffers.items()})


def _restore_optimizer(opt: Adam, names: list[str], ckpt: Checkpoint) -> None:
    for i, name in enumerate(names):
        m = ckpt.opt_moments.get(f"m.{name}")
        v = ckpt.opt_moments.get(f"v.{name}")
        if m is not None:
            opt.state.m[i] = m.astype(opt.state.m[i].dtype, copy=True)
        if v is not None:
            opt.state.v[i] = v.astype(opt.state.v[i].dtype, copy=True)
    opt.state.step = ckpt.step


def train(cfg: TrainConfig, train_samples: Sequence[VideoSample],
          eval_samples: Sequence[VideoSample] | None = None,
          resume: Checkpoint | None = None,
          log=None) -> tuple[Checkpoint, Metrics]:
    """Run the configured number of epochs; returns the final checkpoint and metrics.

    With `resume`, training continues from the checkpoint's epoch; because all
    per-epoch random streams derive from (seed, epoch, index), the result is
    identical to never having stopped.
    """
    if not train_samples:
        raise ConfigError("training dataset is empty")
    max_label = max(s.label for s in train_samples)
    if max_label >= cfg.class_count:
        raise ConfigError(f"label {max_label} outside class_count {cfg.class_count}")
    started = time.perf_counter()
    preset = cfg.preset_spec
    spec = preset.segment_spec()
    aug = preset.augment("train")
    eval_set = eval_samples if eval_samples is not None else train_samples

    model = SELRCNModel(cfg)
    params = model.named_params()
    names = list(params)
    opt = Adam(list(params.values()), lr=cfg.learning_rate)
    start_epoch = 0
    if resume is not None:
        load_weights(model, resume)
        _restore_optimizer(opt, names, resume)
        start_epoch = resume.epoch
        if start_epoch >= cfg.epochs:
            raise ConfigError(f"checkpoint already at epoch {start_epoch} >= {cfg.epochs}")

    segments: list[Segment] = []
    for video in train_samples:
        segments.extend(segment_video(video, spec))

    metrics = Metrics()
    for epoch in range(start_epoch, cfg.epochs):
        opt.lr = cfg.learning_rate * cfg.lr_decay ** epoch
        order = np.random.default_rng(
            [cfg.seed & 0xFFFFFFFFFFFFFFFF, epoch, 0x50E]).permutation(len(segments))
        loss_sum = 0.0
        seg_correct = 0
        for batch_idx in range(0, len(order), cfg.batch_size):
            chosen = [segments[i] for i in order[batch_idx:batch_idx + cfg.batch_size]]
            frames = np.stack([
                augment_segment(seg, aug, segment_rng(cfg.seed, seg.video_id, seg.index, epoch))
                for seg in chosen])
            labels = np.array([seg.label for seg in chosen])
            drop_rng = np.random.default_rng(
                [cfg.seed & 0xFFFFFFFFFFFFFFFF, epoch, batch_idx, 0xD0])
            opt.zero_grad()
            with Tape() as tape:
                loss, fused = model.segment_loss(frames, labels, training=True, rng=drop_rng)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(
                    f"loss became {loss_val} at epoch {epoch}, batch {batch_idx // cfg.batch_size}")
            backward(tape, loss)
            opt.step()
            loss_sum += loss_val * len(chosen)
            seg_correct += int((fused.argmax(axis=1) == labels).sum())
        eval_acc = evaluate(model, eval_set).accuracy
        row = EpochStats(epoch=epoch, train_loss=loss_sum / len(segments),
                         train_acc=seg_correct / len(segments), eval_acc=eval_acc,
                         learning_rate=opt.lr)
        metrics.epochs.append(row)
        if log is not None:
            log(f"epoch {row.epoch}: loss {row.train_loss:.4f} "
                f"train_acc {row.train_acc:.3f} eval_acc {row.eval_acc:.3f}")

    final = evaluate(model, eval_set)
    metrics.per_class = final.per_class
    metrics.wall_time = time.perf_counter() - started
    ckpt = build_checkpoint(model, opt, epoch=cfg.epochs)
    return ckpt, metrics


# ---------------------------------------------------------------------------
# Ablation grids
# ---------------------------------------------------------------------------

SE_GRID = {"se_spatial": [False, True], "se_temporal": [False, True]}


def ablation_grid(base: TrainConfig, axes: dict[str, list],
                  train_samples: Sequence[VideoSample],
                  eval_samples: Sequence[VideoSample] | None = None,
                  log=None) -> list[dict]:
    """Train/evaluate every combination of the axes with the shared seed."""
    allowed = {"se_spatial", "se_temporal", "lstm_layers", "hidden_units"}
    unknown = set(axes) - allowed
    if unknown:
        raise ConfigError(f"unknown ablation axes: {sorted(unknown)} (allowed: {sorted(allowed)})")
    rows = []
    keys = list(axes)
    for combo in itertools.product(*(axes[k] for k in keys)):
        cfg = replace(base, **dict(zip(keys, combo)))
        if log is not None:
            log("ablation cell: " + ", ".join(f"{k}={v}" for k, v in zip(keys, combo)))
        _, metrics = train(cfg, train_samples, eval_samples, log=log)
        rows.append({
            "se_spatial": cfg.se_spatial,
            "se_temporal": cfg.se_temporal,
            "layers": cfg.layers(),
            "hidden": cfg.hidden(),
            "eval_acc": metrics.final_eval_acc,
        })
    return rows


def ablation_csv(rows: list[dict]) -> str:
    lines = ["se_spatial,se_temporal,layers,hidden,eval_acc"]
    for row in rows:
        lines.append(f"{int(row['se_spatial'])},{int(row['se_temporal'])},"
                     f"{row['layers']},{row['hidden']},{row['eval_acc']:.10g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Seeded synthetic benchmark (desk-scale stand-in for the full datasets)
# ---------------------------------------------------------------------------

BENCHMARK_CLASSES = 4
BENCHMARK_TRAIN_SAMPLES = 400
BENCHMARK_EVAL_SAMPLES = 100
BENCHMARK_NOISE = 0.03
BENCHMARK_LR = 2e-3


def benchmark_config(seed: int = 1, se_spatial: bool = True, se_temporal: bool = True,
                     epochs: int = 16) -> TrainConfig:
    # pure scaling for the sequence gate: multiplicative weights in (0, 1)
    # actually select frames, which is what the ablation measures
    return TrainConfig(epochs=epochs, learning_rate=BENCHMARK_LR, batch_size=28,
                       lr_decay=0.9, dropout=0.5, seed=seed, preset="tiny",
                       se_spatial=se_spatial, se_temporal=se_temporal,
                       reweight="scale", class_count=BENCHMARK_CLASSES)


def benchmark_dataset(seed: int = 1):
    """Train and eval splits plus the informative-frame masks of the eval split."""
    from .datasets import synth_generate
    preset = PRESETS["tiny"]
    train_ds = synth_generate(BENCHMARK_CLASSES, BENCHMARK_TRAIN_SAMPLES,
                              t_video=preset.segment_length, noise=BENCHMARK_NOISE,
                              seed=seed * 1000 + 1, frame_size=preset.short_side,
                              id_prefix="train")
    eval_ds = synth_generate(BENCHMARK_CLASSES, BENCHMARK_EVAL_SAMPLES,
                             t_video=preset.segment_length, noise=BENCHMARK_NOISE,
                             seed=seed * 1000 + 2, frame_size=preset.short_side,
                             id_prefix="eval")
    return train_ds, eval_ds
