"""Deterministic moving-square videos with templated questions.

Each clip shows one colored square sliding across a dark, lightly noisy
background. Color, direction and speed come from small enumerations; the
answer to every question is read straight off those attributes.
"""

from __future__ import annotations

import itertools
from importlib import resources
from pathlib import Path

import numpy as np

from .manifest import ManifestRecord, write_manifest
from .sampling import write_frame_stack

COLORS = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (40, 80, 230),
    "yellow": (230, 210, 40),
}
DIRECTIONS = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1)}
# fraction of the free track the square covers over the clip
SPEEDS = {"slow": 0.2, "medium": 0.4, "fast": 0.6, "rapid": 0.8}
QUESTIONS = {
    "color": "what color is the square",
    "direction": "which way does it move",
    "speed": "how fast does it move",
}
BACKGROUND = 30
NOISE = 8


def square_size(resolution: int) -> int:
    return max(2, resolution * 6 // 32)


def render(color, direction, speed, frames, resolution, rng) -> np.ndarray:
    size = square_size(resolution)
    free = resolution - size
    travel = int(round(SPEEDS[speed] * free))
    dx, dy = DIRECTIONS[direction]

    def start(delta):
        if delta > 0:
            return int(rng.integers(0, free - travel + 1))
        if delta < 0:
            return int(rng.integers(travel, free + 1))
        return int(rng.integers(0, free + 1))

    x0, y0 = start(dx), start(dy)
    noise = rng.integers(-NOISE, NOISE + 1, size=(frames, resolution, resolution, 3))
    video = np.clip(BACKGROUND + noise, 0, 255).astype(np.uint8)
    for f in range(frames):
        shift = int(round(travel * f / max(1, frames - 1)))
        x, y = x0 + dx * shift, y0 + dy * shift
        video[f, y : y + size, x : x + size] = COLORS[color]
    return video


def decode_attributes(video: np.ndarray) -> dict:
    """Recover (color, direction, speed) from pixels alone."""
    frames, res = video.shape[0], video.shape[1]
    fg = np.abs(video.astype(int) - BACKGROUND).max(axis=-1) > 3 * NOISE
    pixels = video[fg].astype(float)
    mean = pixels.mean(axis=0)
    color = min(COLORS, key=lambda c: np.sum((np.array(COLORS[c]) - mean) ** 2))
    centres = []
    for f in range(frames):
        ys, xs = np.nonzero(fg[f])
        centres.append((xs.mean(), ys.mean()))
    dx, dy = np.subtract(centres[-1], centres[0])
    if abs(dx) >= abs(dy):
        direction = "right" if dx > 0 else "left"
    else:
        direction = "down" if dy > 0 else "up"
    frac = max(abs(dx), abs(dy)) / (res - square_size(res))
    speed = min(SPEEDS, key=lambda s: abs(SPEEDS[s] - frac))
    return {"color": color, "direction": direction, "speed": speed}


def caption(attrs: dict) -> str:
    return f"a {attrs['color']} square moves {attrs['direction']} {attrs['speed']}"


def attribute_plan(pairs: int, rng) -> list[dict]:
    """Every attribute combination once per cycle, in seeded order."""
    combos = list(itertools.product(COLORS, DIRECTIONS, SPEEDS))
    plan = []
    while len(plan) < pairs:
        for i in rng.permutation(len(combos)):
            plan.append(dict(zip(("color", "direction", "speed"), combos[i])))
    return plan[:pairs]


def make_synthetic_dataset(out_dir, pairs=64, frames=4, resolution=32, seed=0, vocab=True) -> Path:
    """Write ``media/*.mcgv`` clips and ``manifest.jsonl`` under ``out_dir``.

    Returns the manifest path. Output bytes depend only on the arguments.
    """
    if pairs < 2:
        raise ValueError("need at least 2 pairs")
    out = Path(out_dir)
    (out / "media").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    qtypes = list(QUESTIONS)
    records = []
    for i, attrs in enumerate(attribute_plan(pairs, rng)):
        path = out / "media" / f"{i:05d}.mcgv"
        write_frame_stack(path, render(**attrs, frames=frames, resolution=resolution, rng=rng))
        qtype = qtypes[i % len(qtypes)]
        records.append(ManifestRecord(
            id=f"syn{i:05d}",
            video=str(path),
            question=QUESTIONS[qtype],
            answer=attrs[qtype],
            qtype=qtype,
            caption=caption(attrs),
        ))
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records, relative_to=out)
    if vocab:
        text = resources.files("mcg.data").joinpath("toy_vocab.txt").read_text("utf-8")
        (out / "vocab.txt").write_text(text, encoding="utf-8")
    return manifest
