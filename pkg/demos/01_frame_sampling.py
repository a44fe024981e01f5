"""Head-tail frame sampling on a synthetic clip.

Run: python3 demos/01_frame_sampling.py
"""
import tempfile
from pathlib import Path

import numpy as np

from mcg.sampling import VideoMeta, head_tail_region, head_tail_sample, load_clip, segment_bounds, write_frame_stack

# a 160-frame video split into 4 segments of 40 frames
meta = VideoMeta(160)
for k, (lo, hi) in enumerate(segment_bounds(160, 4)):
    region = head_tail_region(lo, hi, 0.3)
    print(f"segment {k}: [{lo}, {hi})  head {region[0]}..{region[11]}  tail {region[12]}..{region[-1]}")

# eval mode is fixed: first frame of even segments, last frame of odd ones
print("eval plan:", head_tail_sample(meta, 4, mode="eval").indices)

# train mode draws from the head and tail only, reproducibly per seed
for seed in range(3):
    print(f"train plan (seed {seed}):", head_tail_sample(meta, 4, mode="train", seed=seed).indices)

# too short a clip is an error unless repeats are allowed
print("repeat plan:", head_tail_sample(VideoMeta(3), 8, allow_repeat=True).indices)

# write a tiny clip, then sample, resize and normalize it in one call
with tempfile.TemporaryDirectory() as tmp:
    frames = (np.arange(12)[:, None, None, None] * 20 + np.zeros((12, 48, 48, 3))).astype(np.uint8)
    path = Path(tmp) / "ramp.mcgv"
    write_frame_stack(path, frames)
    clip = load_clip(path, 4, 32, mean=(127.5, 127.5, 127.5), std=(64.0, 64.0, 64.0))  # pixel units
    print("clip", clip.frames.shape)
    # frame i has brightness 20*i, so the means reveal the eval plan (0, 5, 6, 11)
    print("per-frame mean after normalization:", clip.frames.mean(axis=(1, 2, 3)).round(3))
