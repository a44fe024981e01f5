"""Attention and feed-forward building blocks shared by every component."""

from __future__ import annotations

import torch.nn.functional as F
from torch import nn


def attention(q, k, v, mask=None):
    """Scaled dot-product attention.

    ``q``: (..., Lq, dh), ``k``/``v``: (..., Lk, dh). ``mask`` is boolean and
    broadcastable to (..., Lq, Lk); True marks keys a query may look at.
    Returns the attended values and the weight rows.
    """
    scores = q @ k.transpose(-1, -2) / q.shape[-1] ** 0.5
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    weights = scores.softmax(dim=-1)
    return weights @ v, weights


def split_heads(x, heads):
    *lead, length, dim = x.shape
    return x.reshape(*lead, length, heads, dim // heads).transpose(-2, -3)


def merge_heads(x):
    *lead, heads, length, dh = x.shape
    return x.transpose(-2, -3).reshape(*lead, length, heads * dh)


class SelfAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def project(self, x):
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        return split_heads(q, self.heads), split_heads(k, self.heads), split_heads(v, self.heads)

    def forward(self, x, mask=None, return_weights=False):
        q, k, v = self.project(x)
        out, weights = attention(q, k, v, mask)
        out = self.proj(merge_heads(out))
        return (out, weights) if return_weights else out


class CrossAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)

    def project_kv(self, context):
        k, v = self.kv(context).chunk(2, dim=-1)
        return split_heads(k, self.heads), split_heads(v, self.heads)

    def forward(self, x, context, mask=None, return_weights=False, kv=None):
        q = split_heads(self.q(x), self.heads)
        k, v = kv if kv is not None else self.project_kv(context)
        out, weights = attention(q, k, v, mask)
        out = self.proj(merge_heads(out))
        return (out, weights) if return_weights else out


class FeedForward(nn.Module):
    def __init__(self, dim, mlp_ratio=4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


def key_padding_mask(mask):
    """(B, L) real-token mask -> (B, 1, 1, L) attention mask over keys."""
    return mask[:, None, None, :]


class EncoderBlock(nn.Module):
    """Pre-norm bidirectional self-attention block."""

    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_ratio)

    def forward(self, x, mask=None):
        attn_mask = None if mask is None else key_padding_mask(mask)
        x = x + self.attn(self.norm1(x), attn_mask)
        return x + self.mlp(self.norm2(x))


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.trunc_normal_(m.weight, std=std)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
