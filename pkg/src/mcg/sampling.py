"""Sparse head-tail frame sampling, media decoding and clip normalization.

Two media layouts are understood:

* a directory of image files, read in lexicographic filename order;
* a raw frame-stack file: a 16-byte header (magic ``b"MCGV"``, then
  little-endian u32 frame_count, height, width) followed by
  ``frame_count * height * width * 3`` uint8 RGB values.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MCGV_MAGIC = b"MCGV"
_HEADER = struct.Struct("<4sIII")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class SamplingError(ValueError):
    pass


class DecodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class VideoMeta:
    frame_count: int
    frames_per_second: float = 30.0
    source_id: str = ""

    def __post_init__(self):
        if self.frame_count < 1:
            raise SamplingError(f"frame_count must be >= 1, got {self.frame_count}")


@dataclass(frozen=True)
class FrameIndexPlan:
    indices: tuple[int, ...]
    mode: str
    seed: int | None = None


@dataclass
class VideoClip:
    frames: np.ndarray  # (n, H, W, 3) uint8
    plan: FrameIndexPlan


@dataclass
class NormalizedClip:
    frames: np.ndarray  # (n, H, W, 3) float
    mean: tuple[float, float, float]
    std: tuple[float, float, float]


def segment_bounds(frame_count: int, n: int) -> list[tuple[int, int]]:
    """Split ``range(frame_count)`` into ``n`` contiguous near-equal segments."""
    return [(k * frame_count // n, (k + 1) * frame_count // n) for k in range(n)]


def head_tail_region(start: int, stop: int, ratio: float) -> np.ndarray:
    """Indices in the head and tail of ``[start, stop)``, each ``ceil(ratio * L)`` long."""
    length = stop - start
    width = min(length, math.ceil(ratio * length))
    head = np.arange(start, start + width)
    tail = np.arange(stop - width, stop)
    return np.union1d(head, tail)


def head_tail_sample(
    meta: VideoMeta,
    n: int,
    mode: str = "eval",
    seed: int = 0,
    ratio: float = 0.3,
    allow_repeat: bool = False,
) -> FrameIndexPlan:
    """Pick ``n`` sorted frame indices, one per segment, biased to segment ends.

    In ``train`` mode each segment contributes a uniform draw from the union of
    its head and tail regions. In ``eval`` mode even segments give their first
    frame and odd segments their last frame.
    """
    if n < 2:
        raise SamplingError(f"need n >= 2 frames, got {n}")
    if mode not in ("train", "eval"):
        raise SamplingError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0 < ratio <= 1:
        raise SamplingError(f"head/tail ratio must be in (0, 1], got {ratio}")
    count = meta.frame_count
    if count < n:
        if not allow_repeat:
            raise SamplingError(
                f"insufficient frames: {meta.source_id or 'video'} has {count}, need {n}"
            )
        indices = tuple(k * count // n for k in range(n))
        return FrameIndexPlan(indices, mode, seed if mode == "train" else None)

    if mode == "eval":
        indices = [start if k % 2 == 0 else stop - 1 for k, (start, stop) in enumerate(segment_bounds(count, n))]
        return FrameIndexPlan(tuple(indices), mode, None)

    rng = np.random.default_rng(seed)
    indices = []
    for start, stop in segment_bounds(count, n):
        region = head_tail_region(start, stop, ratio)
        indices.append(int(region[rng.integers(len(region))]))
    return FrameIndexPlan(tuple(indices), mode, seed)


# -- media ---------------------------------------------------------------


def write_frame_stack(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"expected (n, H, W, 3) frames, got {frames.shape}")
    n, h, w, _ = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MCGV_MAGIC, n, h, w))
        fh.write(frames.tobytes())


def _read_stack_header(path: Path) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise DecodeError(f"decode failure: {path} is too short for a frame-stack header")
    magic, n, h, w = _HEADER.unpack(head)
    if magic != MCGV_MAGIC:
        raise DecodeError(f"decode failure: {path} has bad magic {magic!r}")
    return n, h, w


def _image_files(path: Path) -> list[Path]:
    return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def probe(source) -> VideoMeta:
    """Read frame count without decoding pixels."""
    path = Path(source)
    if path.is_dir():
        files = _image_files(path)
        if not files:
            raise DecodeError(f"decode failure: no image frames in {path}")
        return VideoMeta(len(files), source_id=str(path))
    if not path.exists():
        raise DecodeError(f"decode failure: {path} does not exist")
    n, _, _ = _read_stack_header(path)
    if n < 1:
        raise DecodeError(f"decode failure: {path} holds no frames")
    return VideoMeta(n, source_id=str(path))


def decode_frames(source, plan: FrameIndexPlan) -> VideoClip:
    """Return exactly the frames at ``plan.indices``, in plan order."""
    path = Path(source)
    meta = probe(path)
    bad = [i for i in plan.indices if not 0 <= i < meta.frame_count]
    if bad:
        raise SamplingError(
            f"plan/source mismatch: indices {bad} outside {meta.frame_count} frames of {path}"
        )
    if path.is_dir():
        from PIL import Image

        files = _image_files(path)
        frames = []
        for i in plan.indices:
            try:
                with Image.open(files[i]) as im:
                    frames.append(np.asarray(im.convert("RGB"), dtype=np.uint8))
            except OSError as exc:
                raise DecodeError(f"decode failure: {files[i]}: {exc}") from exc
        if len({f.shape for f in frames}) > 1:
            raise DecodeError(f"decode failure: frames of {path} differ in size")
        return VideoClip(np.stack(frames), plan)

    n, h, w = _read_stack_header(path)
    frame_bytes = h * w * 3
    if path.stat().st_size < _HEADER.size + n * frame_bytes:
        raise DecodeError(f"decode failure: {path} is truncated")
    data = np.memmap(path, dtype=np.uint8, mode="r", offset=_HEADER.size, shape=(n, h, w, 3))
    frames = np.array(data[list(plan.indices)])
    del data
    return VideoClip(frames, plan)


# -- resize / normalize --------------------------------------------------


def _bilinear_weights(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) interpolation matrix with half-pixel centres."""
    scale = in_size / out_size
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    src = np.clip(src, 0, in_size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    mat = np.zeros((out_size, in_size))
    rows = np.arange(out_size)
    np.add.at(mat, (rows, lo), 1 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def bilinear_resize(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize ``(..., H, W, C)`` arrays; output is float64."""
    wy = _bilinear_weights(frames.shape[-3], height)
    wx = _bilinear_weights(frames.shape[-2], width)
    x = frames.astype(np.float64)
    return np.einsum("ph,...hwc,qw->...pqc", wy, x, wx)


def resize_normalize(clip: VideoClip, resolution: int, mean, std, patch_size: int | None = None) -> NormalizedClip:
    if patch_size is not None and resolution % patch_size:
        raise SamplingError(f"resolution {resolution} is not divisible by patch size {patch_size}")
    mean = tuple(float(m) for m in mean)
    std = tuple(float(s) for s in std)
    frames = clip.frames
    if frames.shape[1:3] != (resolution, resolution):
        frames = bilinear_resize(frames, resolution, resolution)
    frames = (frames.astype(np.float64) - np.asarray(mean)) / np.asarray(std)
    return NormalizedClip(frames, mean, std)


def load_clip(source, n: int, resolution: int, mean, std, mode="eval", seed=0, ratio=0.3,
              allow_repeat=False, patch_size=None) -> NormalizedClip:
    """Probe, sample, decode and normalize in one call."""
    meta = probe(source)
    plan = head_tail_sample(meta, n, mode=mode, seed=seed, ratio=ratio, allow_repeat=allow_repeat)
    return resize_normalize(decode_frames(source, plan), resolution, mean, std, patch_size)
