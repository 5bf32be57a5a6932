"""Video-to-segment data protocol: overlapping fixed-length segments with
loop completion, resize/crop/flip augmentation, and channel normalization.

Frames are (3, H, W) float arrays in [0, 1] until normalization. One crop
offset and one flip decision are drawn per segment and applied to every frame
so motion cues survive augmentation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class PipelineError(ValueError):
    """Invalid video, segment, or augmentation input."""


@dataclass
class VideoSample:
    frames: np.ndarray  # (T, 3, H, W) in [0, 1]
    label: int
    id: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise PipelineError(f"video {self.id!r}: expected (T, 3, H, W), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise PipelineError(f"video {self.id!r} has no frames")


@dataclass
class Segment:
    frames: np.ndarray  # (length, 3, H, W)
    label: int
    video_id: str
    index: int
    start: int
    wrapped: bool


@dataclass
class SegmentSpec:
    length: int = 30
    stride: int = 15

    def __post_init__(self):
        if not (1 <= self.stride <= self.length):
            raise PipelineError(f"need 1 <= stride <= length, got {self.stride}/{self.length}")


@dataclass
class AugmentConfig:
    short_side: int = 256
    crop: int = 224
    flip_prob: float = 0.5
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    mode: str = "train"

    def __post_init__(self):
        if self.crop > self.short_side:
            raise PipelineError(f"crop {self.crop} exceeds short side {self.short_side}")
        if self.mode not in ("train", "test"):
            raise PipelineError(f"mode must be train or test, got {self.mode!r}")


def segment_video(video: VideoSample, spec: SegmentSpec) -> list[Segment]:
    """Cut a video into overlapping segments of exactly spec.length frames.

    Starts advance by spec.stride until a segment reaches the video end; the
    final segment wraps to frame 0 of the video when it overshoots, so short
    videos still yield one (looped) segment.
    """
    t_video = video.frames.shape[0]
    segments: list[Segment] = []
    start = 0
    while True:
        end = start + spec.length
        if end <= t_video:
            frames = video.frames[start:end].copy()
            wrapped = False
        else:
            idx = np.arange(start, end) % t_video
            frames = video.frames[idx].copy()
            wrapped = True
        segments.append(Segment(frames=frames, label=video.label, video_id=video.id,
                                index=len(segments), start=start, wrapped=wrapped))
        if end >= t_video:
            break
        start += spec.stride
    return segments


def _bilinear_resize(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    c, h, w = frame.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = (ys - y0f).astype(frame.dtype)
    fx = (xs - x0f).astype(frame.dtype)
    y0 = np.clip(y0f.astype(int), 0, h - 1)
    y1 = np.clip(y0f.astype(int) + 1, 0, h - 1)
    x0 = np.clip(x0f.astype(int), 0, w - 1)
    x1 = np.clip(x0f.astype(int) + 1, 0, w - 1)
    rows0 = frame[:, y0, :]
    rows1 = frame[:, y1, :]
    top = rows0[:, :, x0] * (1 - fx) + rows0[:, :, x1] * fx
    bot = rows1[:, :, x0] * (1 - fx) + rows1[:, :, x1] * fx
    return top * (1 - fy)[None, :, None] + bot * fy[None, :, None]


def resize_short_side(frame: np.ndarray, target: int = 256) -> np.ndarray:
    """Bilinear scale so the short side equals target, aspect ratio preserved."""
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise PipelineError(f"expected a (3, H, W) frame, got {frame.shape}")
    _, h, w = frame.shape
    if h <= w:
        out_h = target
        out_w = int(round(w * target / h))
    else:
        out_w = target
        out_h = int(round(h * target / w))
    if (out_h, out_w) == (h, w):
        return frame.copy()
    return _bilinear_resize(frame, out_h, out_w)


def flip_horizontal(frames: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(frames[..., ::-1])


def normalize_frames(frames: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    mean = np.asarray(mean, dtype=frames.dtype).reshape(1, 3, 1, 1)
    std = np.asarray(std, dtype=frames.dtype).reshape(1, 3, 1, 1)
    return (frames - mean) / std


def denormalize_frames(frames: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    mean = np.asarray(mean, dtype=frames.dtype).reshape(1, 3, 1, 1)
    std = np.asarray(std, dtype=frames.dtype).reshape(1, 3, 1, 1)
    return frames * std + mean


def augment_segment(segment: Segment, cfg: AugmentConfig,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Crop, optionally flip, and normalize one segment's frames.

    Training draws a single crop offset and flip decision for the whole
    segment; test mode center-crops and never flips, so it is deterministic.
    """
    frames = segment.frames
    t, c, h, w = frames.shape
    if cfg.crop > h or cfg.crop > w:
        raise PipelineError(f"crop {cfg.crop} larger than frame {h}x{w}")
    if cfg.mode == "train":
        if rng is None:
            raise PipelineError("training augmentation needs a random generator")
        off_y = int(rng.integers(0, h - cfg.crop + 1))
        off_x = int(rng.integers(0, w - cfg.crop + 1))
        flip = bool(rng.random() < cfg.flip_prob)
    else:
        off_y = (h - cfg.crop) // 2
        off_x = (w - cfg.crop) // 2
        flip = False
    out = frames[:, :, off_y:off_y + cfg.crop, off_x:off_x + cfg.crop]
    if flip:
        out = flip_horizontal(out)
    return normalize_frames(out.astype(np.float32, copy=True), cfg.mean, cfg.std)


def segment_rng(seed: int, video_id: str, segment_index: int, epoch: int = 0) -> np.random.Generator:
    """Independent per-segment generator so augmentation is order-independent."""
    import zlib
    vid_hash = zlib.crc32(video_id.encode("utf-8"))
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, vid_hash, segment_index, epoch])
