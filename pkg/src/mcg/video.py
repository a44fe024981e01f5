"""Intra-video encoder: patch embedding and divided space-time attention.

Token layout is ``[cls, frame0 patches..., frame1 patches..., ...]`` with
patches of a frame in row-major grid order.
"""

from __future__ import annotations

import torch
from torch import nn

from .layers import FeedForward, attention, merge_heads, split_heads


class ShapeError(ValueError):
    pass


def patchify(frames, patch_size):
    """(B, T, H, W, C) -> (B, T, (H/P)*(W/P), P*P*C).

    Each patch is flattened row-major over (row, column, channel).
    """
    b, t, h, w, c = frames.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"frame size {h}x{w} is not divisible by patch size {p}")
    x = frames.reshape(b, t, h // p, p, w // p, p, c)
    x = x.permute(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(b, t, (h // p) * (w // p), p * p * c)


def unpatchify(grid, patch_size, height, width):
    b, t, n, _ = grid.shape
    p = patch_size
    c = grid.shape[-1] // (p * p)
    x = grid.reshape(b, t, height // p, width // p, p, p, c)
    x = x.permute(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(b, t, height, width, c)


class PatchEmbed(nn.Module):
    def __init__(self, dim, patch_size, max_frames, max_patches, channels=3):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Linear(channels * patch_size * patch_size, dim)
        self.spatial_pos = nn.Parameter(torch.zeros(max_patches, dim))
        self.temporal_pos = nn.Parameter(torch.zeros(max_frames, dim))
        self.cls_token = nn.Parameter(torch.zeros(dim))

    def forward(self, grid):
        b, t, n, k = grid.shape
        if k != self.proj.in_features:
            raise ShapeError(
                f"patch grid {tuple(grid.shape)} does not fit projection {tuple(self.proj.weight.shape)}"
            )
        if t > self.temporal_pos.shape[0] or n > self.spatial_pos.shape[0]:
            raise ShapeError(
                f"grid {tuple(grid.shape)} exceeds positional tables "
                f"({self.temporal_pos.shape[0]} frames, {self.spatial_pos.shape[0]} patches)"
            )
        x = self.proj(grid) + self.spatial_pos[:n] + self.temporal_pos[:t, None, :]
        cls = self.cls_token.expand(b, 1, -1)
        return torch.cat([cls, x.reshape(b, t * n, -1)], dim=1)


class DividedAttention(nn.Module):
    """Multi-head attention restricted to one axis of the (frame, patch) grid.

    ``axis="time"``: a patch attends to the same patch position in every frame.
    ``axis="space"``: a patch attends to cls plus the patches of its own frame.
    The cls token attends to every token in both cases.
    """

    def __init__(self, dim, heads, axis):
        super().__init__()
        self.heads = heads
        self.axis = axis
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, frames, patches, return_weights=False):
        b, length, d = x.shape
        h = self.heads
        q, k, v = (split_heads(z, h) for z in self.qkv(x).chunk(3, dim=-1))  # (B, h, L, dh)
        dh = q.shape[-1]

        cls_out, cls_w = attention(q[:, :, :1], k, v)

        def grid(z):
            return z[:, :, 1:].reshape(b, h, frames, patches, dh)

        qg, kg, vg = grid(q), grid(k), grid(v)
        if self.axis == "time":
            # (B, h, N, T, dh): sequences over frames for each patch position
            qg, kg, vg = (z.transpose(2, 3) for z in (qg, kg, vg))
            out, w = attention(qg, kg, vg)
            out = out.transpose(2, 3)
        else:
            kc = k[:, :, None, :1].expand(b, h, frames, 1, dh)
            vc = v[:, :, None, :1].expand(b, h, frames, 1, dh)
            out, w = attention(qg, torch.cat([kc, kg], dim=3), torch.cat([vc, vg], dim=3))
        out = torch.cat([cls_out, out.reshape(b, h, frames * patches, dh)], dim=2)
        out = self.proj(merge_heads(out))
        return (out, {"cls": cls_w, "grid": w}) if return_weights else out


class DividedBlock(nn.Module):
    def __init__(self, dim, heads, mlp_ratio=4.0, timesformer_residuals=False):
        super().__init__()
        self.timesformer_residuals = timesformer_residuals
        self.temporal_norm = nn.LayerNorm(dim)
        self.temporal = DividedAttention(dim, heads, "time")
        self.spatial_norm = nn.LayerNorm(dim)
        self.spatial = DividedAttention(dim, heads, "space")
        self.mlp_norm = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_ratio)

    def temporal_stage(self, x, frames, patches):
        return x + self.temporal(self.temporal_norm(x), frames, patches)

    def spatial_stage(self, x, frames, patches):
        return x + self.spatial(self.spatial_norm(x), frames, patches)

    def forward(self, x, frames, patches):
        t = self.temporal_stage(x, frames, patches)
        s = self.spatial_stage(t, frames, patches)
        if self.timesformer_residuals:
            return s + self.mlp(self.mlp_norm(s))
        return self.mlp(self.mlp_norm(s)) + t


class VideoEncoder(nn.Module):
    def __init__(self, dim, heads, depth, patch_size, max_frames, max_resolution, mlp_ratio=4.0,
                 timesformer_residuals=False):
        super().__init__()
        self.patch_size = patch_size
        self.embed = PatchEmbed(dim, patch_size, max_frames, (max_resolution // patch_size) ** 2)
        self.blocks = nn.ModuleList(
            DividedBlock(dim, heads, mlp_ratio, timesformer_residuals) for _ in range(depth)
        )
        self.norm = nn.LayerNorm(dim)

    def forward(self, frames):
        """(B, T, H, W, 3) normalized frames -> (B, 1 + T*N, dim) tokens."""
        grid = patchify(frames, self.patch_size)
        _, t, n, _ = grid.shape
        x = self.embed(grid)
        for block in self.blocks:
            x = block(x, t, n)
        return self.norm(x)
