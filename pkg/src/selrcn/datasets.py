"""Dataset ingestion and generation.

On disk a dataset is a manifest CSV (`video_dir,label_index,frame_count`,
optional header) plus one directory per video holding binary PPM frames named
frame_000001.ppm onward. The synthetic generator produces desk-scale videos
whose class is encoded by when and in which direction a bright block moves,
buried among noise-only frames.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pipeline import VideoSample

FRAME_TEMPLATE = "frame_{:06d}.ppm"


class ManifestError(ValueError):
    """Malformed manifest row or inconsistent frame directory."""


class PPMError(ValueError):
    """Not a parseable binary (P6) PPM file."""


# ---------------------------------------------------------------------------
# PPM frame files
# ---------------------------------------------------------------------------

def write_ppm(path: Path | str, frame: np.ndarray) -> None:
    """Write a (3, H, W) [0,1] frame as binary PPM, maxval 255."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise PPMError(f"expected (3, H, W) frame, got {frame.shape}")
    _, h, w = frame.shape
    pixels = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.transpose(1, 2, 0).tobytes())


def _read_ppm_token(fh) -> bytes:
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise PPMError("unexpected end of header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_ppm(path: Path | str) -> np.ndarray:
    """Read a binary PPM into a (3, H, W) float32 array scaled to [0, 1]."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P6":
            raise PPMError(f"{path}: bad magic {magic!r}, expected P6")
        w = int(_read_ppm_token(fh))
        h = int(_read_ppm_token(fh))
        maxval = int(_read_ppm_token(fh))
        if maxval != 255:
            raise PPMError(f"{path}: unsupported maxval {maxval}")
        raw = fh.read(w * h * 3)
    if len(raw) != w * h * 3:
        raise PPMError(f"{path}: truncated pixel data ({len(raw)} of {w * h * 3} bytes)")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass
class VideoDescriptor:
    video_dir: Path
    label: int
    frame_count: int

    @property
    def id(self) -> str:
        return self.video_dir.name


def load_manifest(path: Path | str) -> list[VideoDescriptor]:
    """Parse a manifest CSV into descriptors, validating the frame layout.

    The first line is treated as a header when its second column is not an
    integer. Every error names the offending line.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    descriptors: list[VideoDescriptor] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1 and len(row) >= 2 and not _is_int(row[1]):
                continue  # header
            if len(row) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            if not _is_int(row[1]) or not _is_int(row[2]):
                raise ManifestError(f"{path}:{lineno}: label and frame count must be integers")
            video_dir = Path(row[0])
            if not video_dir.is_absolute():
                video_dir = path.parent / video_dir
            label = int(row[1])
            count = int(row[2])
            if label < 0:
                raise ManifestError(f"{path}:{lineno}: negative label {label}")
            if count < 1:
                raise ManifestError(f"{path}:{lineno}: frame count must be >= 1, got {count}")
            if not video_dir.is_dir():
                raise ManifestError(f"{path}:{lineno}: missing video directory {video_dir}")
            actual = len(list(video_dir.glob("frame_*.ppm")))
            if actual != count:
                raise ManifestError(
                    f"{path}:{lineno}: frame-count mismatch in {video_dir}: "
                    f"manifest says {count}, found {actual}")
            descriptors.append(VideoDescriptor(video_dir=video_dir, label=label,
                                               frame_count=count))
    return descriptors


def _is_int(text: str) -> bool:
    try:
        int(text)
        return True
    except ValueError:
        return False


def load_video(desc: VideoDescriptor) -> VideoSample:
    frames = [read_ppm(desc.video_dir / FRAME_TEMPLATE.format(i))
              for i in range(1, desc.frame_count + 1)]
    return VideoSample(frames=np.stack(frames), label=desc.label, id=desc.id)


def load_dataset(manifest_path: Path | str) -> list[VideoSample]:
    return [load_video(d) for d in load_manifest(manifest_path)]


def write_dataset(root: Path | str, samples: list[VideoSample]) -> Path:
    """Write videos as PPM frame directories plus a manifest; returns its path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["video_dir", "label_index", "frame_count"])
        for sample in samples:
            video_dir = root / sample.id
            video_dir.mkdir(exist_ok=True)
            for i, frame in enumerate(sample.frames, start=1):
                write_ppm(video_dir / FRAME_TEMPLATE.format(i), frame)
            writer.writerow([sample.id, sample.label, sample.frames.shape[0]])
    return manifest


# ---------------------------------------------------------------------------
# Synthetic benchmark videos
# ---------------------------------------------------------------------------

BACKGROUND = 0.25
BLOCK_VALUE = 1.0
DISTRACTOR_VALUE = 0.55
NOISE_FRAME_SIGMA = 0.2  # frames outside both block windows are pure noise


@dataclass
class SyntheticDataset:
    samples: list[VideoSample]
    informative: dict[str, np.ndarray]  # video id -> bool mask over frames
    class_count: int
    frame_size: int

    def masks_json(self) -> str:
        return json.dumps({vid: mask.astype(int).tolist()
                           for vid, mask in self.informative.items()}, indent=0)


def _class_layout(k: int, t_video: int, frame_size: int):
    """Start frame and motion direction per class.

    Even classes move horizontally, odd ones vertically; class pairs share a
    temporal window whose start walks from early to late.
    """
    window = max(2, (3 * t_video) // 10)
    n_pos = math.ceil(k / 2)
    if n_pos == 1:
        starts = [max(0, (t_video - window) // 2)]
    else:
        hi = t_video - window
        lo = min(1, hi)
        starts = [int(round(lo + (hi - lo) * i / (n_pos - 1))) for i in range(n_pos)]
    layout = []
    for c in range(k):
        layout.append({"start": starts[c // 2], "window": window,
                       "direction": "horizontal" if c % 2 == 0 else "vertical"})
    return layout


def _draw_moving_block(frames: np.ndarray, start: int, window: int, direction: str,
                       value: float) -> None:
    t_video, _, frame_size, _ = frames.shape
    block = max(2, frame_size // 3)
    travel = frame_size - block
    centered = (frame_size - block) // 2
    for step in range(window):
        t = start + step
        offset = int(round(travel * step / max(1, window - 1)))
        y, x = (centered, offset) if direction == "horizontal" else (offset, centered)
        frames[t, :, y:y + block, x:x + block] = value


def class_template(c: int, k: int, t_video: int, frame_size: int) -> np.ndarray:
    """Noise- and distractor-free frames for class c: background plus the
    bright moving block in the class's temporal window."""
    spec = _class_layout(k, t_video, frame_size)[c]
    frames = np.full((t_video, 3, frame_size, frame_size), BACKGROUND, dtype=np.float32)
    _draw_moving_block(frames, spec["start"], spec["window"], spec["direction"], BLOCK_VALUE)
    return frames


def informative_mask(c: int, k: int, t_video: int) -> np.ndarray:
    spec = _class_layout(k, t_video, 0)[c]
    mask = np.zeros(t_video, dtype=bool)
    mask[spec["start"]:spec["start"] + spec["window"]] = True
    return mask


def synth_generate(classes: int, samples: int, t_video: int = 10, noise: float = 0.1,
                   seed: int = 0, frame_size: int = 16,
                   id_prefix: str = "synth") -> SyntheticDataset:
    """Deterministic labeled videos: round-robin classes, per-video noise stream.

    Frames holding neither block are pure Gaussian-noise frames, so passing
    them through unsuppressed actively hurts a downstream classifier. When the
    layout has more than one temporal window, each video additionally carries a
    dim distractor block moving through one of the other windows in a random
    direction; only the bright block's timing and direction encode the class.

    The `noise` parameter perturbs the block windows; noise=0 leaves the
    informative frames as exact templates.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    layout = _class_layout(classes, t_video, frame_size)
    starts = sorted({spec["start"] for spec in layout})
    window = layout[0]["window"]
    templates = [class_template(c, classes, t_video, frame_size) for c in range(classes)]
    masks = [informative_mask(c, classes, t_video) for c in range(classes)]
    out: list[VideoSample] = []
    informative: dict[str, np.ndarray] = {}
    for i in range(samples):
        label = i % classes
        vid = f"{id_prefix}{i:05d}"
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, i])
        frames = templates[label].copy()
        covered = masks[label].copy()
        other_starts = [s for s in starts if s != layout[label]["start"]]
        if other_starts:
            d_start = other_starts[int(rng.integers(len(other_starts)))]
            d_dir = "horizontal" if rng.integers(2) == 0 else "vertical"
            _draw_moving_block(frames, d_start, window, d_dir, DISTRACTOR_VALUE)
            covered[d_start:d_start + window] = True
        blanks = np.flatnonzero(~covered)
        if blanks.size:
            frames[blanks] = rng.normal(
                0.5, NOISE_FRAME_SIGMA, size=(blanks.size,) + frames.shape[1:]
            ).astype(np.float32)
        if noise > 0:
            windows = np.flatnonzero(covered)
            frames[windows] = frames[windows] + rng.normal(
                0.0, noise, size=(windows.size,) + frames.shape[1:]).astype(np.float32)
        frames = np.clip(frames, 0.0, 1.0)
        out.append(VideoSample(frames=frames.astype(np.float32), label=label, id=vid))
        informative[vid] = masks[label].copy()
    return SyntheticDataset(samples=out, informative=informative, class_count=classes,
                            frame_size=frame_size)
