"""Cross-modal fusor, video-text matching, and the autoregressive answer generator."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .layers import CrossAttention, FeedForward, SelfAttention, attention, key_padding_mask, merge_heads

PROB_CLIP = 1e-7


class GenerationOverflow(RuntimeError):
    pass


class NegativeSamplingError(ValueError):
    pass


class NoSupervisionError(ValueError):
    pass


# -- fusor ---------------------------------------------------------------


class FusionBlock(nn.Module):
    """Pre-norm SA over the queries, CA into a context sequence, then FFN."""

    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = CrossAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_ratio)

    def forward(self, x, context, self_mask=None, context_mask=None):
        x = x + self.self_attn(self.norm1(x), self_mask)
        x = x + self.cross_attn(self.norm2(x), context, context_mask)
        return x + self.mlp(self.norm3(x))


class Fusor(nn.Module):
    def __init__(self, dim, heads, depth, mlp_ratio=4.0):
        super().__init__()
        self.fus_token = nn.Parameter(torch.zeros(dim))
        self.blocks = nn.ModuleList(FusionBlock(dim, heads, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, text, text_mask, video):
        """Fuse text tokens (B, L, d) with video tokens (B, Lv, d).

        Returns the fused sequence (B, 1 + L, d), row 0 being the [FUS] state,
        and its real-token mask.
        """
        if text.shape[0] != video.shape[0] or text.shape[-1] != video.shape[-1]:
            raise ValueError(f"cannot fuse text {tuple(text.shape)} with video {tuple(video.shape)}")
        b = text.shape[0]
        x = torch.cat([self.fus_token.expand(b, 1, -1), text], dim=1)
        mask = torch.cat([torch.ones(b, 1, dtype=torch.bool, device=text_mask.device), text_mask], dim=1)
        for block in self.blocks:
            x = block(x, video, key_padding_mask(mask))
        return self.norm(x), mask


# -- video-text matching -------------------------------------------------


def vtm_predict(fused, head):
    """Match/mismatch probabilities from the [FUS] row; column 0 is "match"."""
    return head(fused[:, 0]).softmax(dim=-1)


def vtm_loss(pos_probs, neg_probs):
    """Mean binary cross-entropy; positives carry the match label, negatives mismatch."""
    p_true = torch.cat([pos_probs[:, 0], neg_probs[:, 1]])
    return -p_true.clamp(PROB_CLIP, 1 - PROB_CLIP).log().mean()


def negative_probabilities(sim, tau):
    """Row-wise softmax of ``sim / tau`` with the diagonal excluded."""
    sim = np.asarray(sim, dtype=np.float64)
    logits = sim / float(tau)
    np.fill_diagonal(logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    return probs / probs.sum(axis=1, keepdims=True)


def sample_negatives(batch_size, sim=None, mode="uniform", seed=0, tau=0.07):
    """One mismatched text index per video: ``j != i`` for every row ``i``."""
    if batch_size < 2:
        raise NegativeSamplingError("cannot form negatives from a batch of fewer than 2 pairs")
    rng = np.random.default_rng(seed)
    if mode == "uniform":
        draws = rng.integers(batch_size - 1, size=batch_size)
        return draws + (draws >= np.arange(batch_size))
    if mode != "hard":
        raise ValueError(f"unknown negative sampling mode {mode!r}")
    if sim is None:
        raise ValueError("hard negatives need a similarity matrix")
    probs = negative_probabilities(sim, tau)
    u = rng.random(batch_size)
    cdf = np.cumsum(probs, axis=1)
    picks = (u[:, None] >= cdf).sum(axis=1)
    # guard against rounding pushing past the last admissible column
    last = np.array([max(j for j in range(batch_size) if j != i) for i in range(batch_size)])
    return np.minimum(picks, last)


# -- generator -----------------------------------------------------------


@dataclass
class GenerationState:
    """Decoding state for one sequence; not shared between concurrent decodes."""

    context: list[int]
    ids: list[int]
    cond: torch.Tensor
    cond_mask: torch.Tensor
    cache: list = field(default_factory=list)  # per block (k, v) of the causal SA
    cond_kv: list = field(default_factory=list)  # per block (k, v) of the CA
    cached: int = 0
    logits: list = field(default_factory=list)
    logprob: float = 0.0
    finished: bool = False

    @property
    def sequence(self):
        return self.context + self.ids

    def fork(self) -> "GenerationState":
        # cached tensors are never modified in place, so a shallow copy is safe
        new = copy.copy(self)
        new.context, new.ids = list(self.context), list(self.ids)
        new.cache, new.logits = list(self.cache), list(self.logits)
        return new


class GeneratorBlock(FusionBlock):
    pass


class Generator(nn.Module):
    """Causal transformer decoder with cross-attention into the conditioning
    sequence; the output projection is tied to the token embedding."""

    def __init__(self, vocab_size, dim, heads, depth, max_len, mlp_ratio=4.0):
        super().__init__()
        self.token_embed = nn.Embedding(vocab_size, dim)
        self.pos_embed = nn.Parameter(torch.zeros(max_len, dim))
        self.blocks = nn.ModuleList(GeneratorBlock(dim, heads, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    @property
    def max_len(self):
        return self.pos_embed.shape[0]

    def output(self, h):
        return h @ self.token_embed.weight.T

    def forward(self, ids, mask, cond, cond_mask):
        """Teacher-forced logits (B, L, V) for every position of ``ids``."""
        length = ids.shape[1]
        if length > self.max_len:
            raise GenerationOverflow(f"generation overflow: {length} > {self.max_len} positions")
        x = self.token_embed(ids) + self.pos_embed[:length]
        causal = torch.ones(length, length, dtype=torch.bool, device=ids.device).tril()
        self_mask = causal[None, None] & key_padding_mask(mask)
        cmask = key_padding_mask(cond_mask)
        for block in self.blocks:
            x = block(x, cond, self_mask, cmask)
        return self.output(self.norm(x))

    def init_state(self, context, gen_id, cond, cond_mask) -> GenerationState:
        """``cond``: (1, Lc, d) conditioning tokens with mask (1, Lc)."""
        state = GenerationState(list(context), [gen_id], cond, cond_mask)
        state.cond_kv = [block.cross_attn.project_kv(cond) for block in self.blocks]
        return state

    def step(self, state: GenerationState):
        """Run the not-yet-cached tokens through the cache; return next-token logits (V,)."""
        seq = state.sequence
        if len(seq) > self.max_len:
            raise GenerationOverflow(f"generation overflow: {len(seq)} > {self.max_len} positions")
        start = state.cached
        new_ids = torch.tensor([seq[start:]], device=state.cond.device)
        x = self.token_embed(new_ids) + self.pos_embed[start : len(seq)]
        n_new = new_ids.shape[1]
        # new queries see all cached keys plus the causal part of the new block
        causal = torch.ones(n_new, len(seq), dtype=torch.bool, device=x.device).tril(diagonal=start)
        cmask = key_padding_mask(state.cond_mask)
        new_cache = []
        for i, block in enumerate(self.blocks):
            h = block.norm1(x)
            q, k, v = block.self_attn.project(h)
            if state.cache:
                k = torch.cat([state.cache[i][0], k], dim=2)
                v = torch.cat([state.cache[i][1], v], dim=2)
            new_cache.append((k, v))
            out, _ = attention(q, k, v, causal)
            x = x + block.self_attn.proj(merge_heads(out))
            x = x + block.cross_attn(block.norm2(x), None, cmask, kv=state.cond_kv[i])
            x = x + block.mlp(block.norm3(x))
        state.cache = new_cache
        state.cached = len(seq)
        logits = self.output(self.norm(x[:, -1]))[0]
        state.logits.append(logits)
        return logits


def lm_loss(logits, targets, mask):
    """Mean negative log-likelihood over supervised positions."""
    if not bool(mask.any()):
        raise NoSupervisionError("no supervised positions")
    nll = -logits.log_softmax(dim=-1).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return nll[mask].mean()


def greedy_decode(generator, state: GenerationState, eos_id, max_len):
    """Argmax decoding; ties go to the lowest token id."""
    while not state.finished:
        logits = generator.step(state)
        logp = logits.double().log_softmax(dim=-1).detach().cpu().numpy()
        token = int(np.argmax(logp))
        state.logprob += float(logp[token])
        if token == eos_id:
            state.finished = True
            break
        state.ids.append(token)
        if len(state.ids) - 1 >= max_len:
            break
    return state


def beam_decode(generator, state: GenerationState, eos_id, max_len, width):
    """Beam search ranked by length-normalized log-probability."""
    beams = [state]
    done = []

    def norm_score(s):
        return s.logprob / max(1, len(s.ids) - 1 + int(s.finished))

    while beams:
        candidates = []
        for beam in beams:
            logits = generator.step(beam)
            logp = logits.double().log_softmax(dim=-1).detach().cpu().numpy()
            order = np.argsort(-logp, kind="stable")[:width]
            for token in order:
                cand = beam.fork()
                cand.logprob = beam.logprob + float(logp[token])
                if token == eos_id:
                    cand.finished = True
                else:
                    cand.ids.append(int(token))
                candidates.append(cand)
        candidates.sort(key=lambda s: -s.logprob)
        beams = []
        for cand in candidates[:width]:
            if cand.finished or len(cand.ids) - 1 >= max_len:
                done.append(cand)
            else:
                beams.append(cand)
        if len(done) >= width:
            break
    done.sort(key=norm_score, reverse=True)
    return done[0]


# -- closed-set classifier variant --------------------------------------


class ClassifierHead(nn.Module):
    """K-way answer classifier on the [FUS] row (class 0 is the unknown answer)."""

    def __init__(self, dim, num_classes):
        super().__init__()
        self.fc = nn.Linear(dim, num_classes)

    def forward(self, fused):
        return self.fc(fused[:, 0])


def classifier_loss(logits, labels):
    return F.cross_entropy(logits, labels)
