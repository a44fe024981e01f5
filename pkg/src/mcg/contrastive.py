"""Multi-granularity contrastive learning.

Instance level: symmetric InfoNCE over projected, L2-normalized summary
tokens. Token level: every text token reads a response out of its video's
token memory (and every video token out of the text memory), and is
contrasted against the responses of the other tokens of the same pair.
"""

from __future__ import annotations

import math

import torch
from torch import nn

NORM_EPS = 1e-12


class EmptyTokenSetError(ValueError):
    pass


def project_normalize(emb, head):
    z = head(emb)
    return z / (z.norm(dim=-1, keepdim=True) + NORM_EPS)


def instance_similarity_matrix(x_cls, y_cls, head_x, head_y):
    """S[i, j] = g_x(x_cls_i) . g_y(y_cls_j) for a batch of summary tokens."""
    if x_cls.shape[0] != y_cls.shape[0]:
        raise ValueError(f"batch mismatch: {x_cls.shape[0]} videos vs {y_cls.shape[0]} texts")
    return project_normalize(x_cls, head_x) @ project_normalize(y_cls, head_y).T


def _diag_nll(logits, dim):
    """-log softmax(logits, dim) on the diagonal, shape (B,)."""
    return -torch.diagonal(logits.log_softmax(dim=dim))


def icl_loss(sim, tau):
    """Symmetric temperature-scaled InfoNCE with in-batch negatives."""
    logits = sim / tau
    return 0.5 * (_diag_nll(logits, 1) + _diag_nll(logits, 0)).mean()


def memory_response(memory, state, key_mask=None):
    """Attention read-out of a memory buffer.

    ``memory``: (..., J, dm); ``state``: (..., K, dm). Slot scores are
    ``tanh(m_j) . tanh(u)``; returns responses (..., K, dm) and weights (..., K, J).
    """
    scores = torch.tanh(state) @ torch.tanh(memory).transpose(-1, -2)
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask[..., None, :], float("-inf"))
    rho = scores.softmax(dim=-1)
    return rho @ memory, rho


def _cosine_matrix(a, b):
    a = a / (a.norm(dim=-1, keepdim=True) + NORM_EPS)
    b = b / (b.norm(dim=-1, keepdim=True) + NORM_EPS)
    return a @ b.transpose(-1, -2)


def _token_direction(states, responses, mask, weights, tau):
    """One direction of the token-level loss, averaged over the batch.

    ``states``/``responses``: (B, K, dm); ``mask``: (B, K) real tokens;
    ``weights``: (B, K) saliency. Returns (1/2B) sum_i (1/K_i) sum_k w_ik (l_y2r + l_r2y).
    """
    logits = _cosine_matrix(states, responses) / tau  # [b, k, j] = sim(u_k, r_j)
    pair = mask[:, :, None] & mask[:, None, :]
    # finite fill keeps fully padded rows NaN-free; they are dropped below
    logits = logits.masked_fill(~pair, torch.finfo(logits.dtype).min)
    fwd = -torch.diagonal(logits.log_softmax(dim=2), dim1=1, dim2=2)  # softmax over r_j
    bwd = -torch.diagonal(logits.log_softmax(dim=1), dim1=1, dim2=2)  # softmax over u_j
    per_token = torch.where(mask, weights * (fwd + bwd), torch.zeros_like(fwd))
    counts = mask.sum(dim=1).to(per_token.dtype)
    return (per_token.sum(dim=1) / counts).mean() / 2


def uniform_saliency(mask):
    m = mask.to(torch.get_default_dtype())
    return m / m.sum(dim=1, keepdim=True)


def tcl_loss(video_tokens, text_tokens, text_mask, state_x, state_y, tau,
             alpha=None, beta=None, video_mask=None):
    """Token-grained contrastive loss (mean of both language/video directions).

    ``video_tokens``: (B, J, d) patch tokens (no cls); ``text_tokens``: (B, K, d)
    (no cls); masks mark real tokens. ``alpha``/``beta`` default to uniform
    saliency 1/K_i and 1/J_i.
    """
    if video_mask is None:
        video_mask = torch.ones(video_tokens.shape[:2], dtype=torch.bool, device=video_tokens.device)
    if video_tokens.shape[1] == 0 or text_tokens.shape[1] == 0:
        raise EmptyTokenSetError("empty token set")
    if not bool(text_mask.any(dim=1).all()) or not bool(video_mask.any(dim=1).all()):
        raise EmptyTokenSetError("empty token set")
    video_mem = state_x(video_tokens)  # (B, J, dm)
    text_mem = state_y(text_tokens)  # (B, K, dm)
    if alpha is None:
        alpha = uniform_saliency(text_mask).to(text_mem.dtype)
    if beta is None:
        beta = uniform_saliency(video_mask).to(video_mem.dtype)

    video_resp, _ = memory_response(video_mem, text_mem, video_mask)
    text_resp, _ = memory_response(text_mem, video_mem, text_mask)
    tvc = _token_direction(text_mem, video_resp, text_mask, alpha, tau)
    tlc = _token_direction(video_mem, text_resp, video_mask, beta, tau)
    return 0.5 * (tvc + tlc)


def mcl_loss(l_icl, l_tcl, theta1=1.0, theta2=1.0):
    if theta1 < 0 or theta2 < 0:
        raise ValueError("theta weights must be non-negative")
    return theta1 * l_icl + theta2 * l_tcl


class ContrastiveHeads(nn.Module):
    """Projection heads, memory state maps, temperatures and saliency gates."""

    def __init__(self, dim, proj_dim, memory_dim, tau1_init=0.07, tau2_init=0.07, saliency="uniform"):
        super().__init__()
        self.proj_x = nn.Linear(dim, proj_dim, bias=False)
        self.proj_y = nn.Linear(dim, proj_dim, bias=False)
        self.state_x = nn.Linear(dim, memory_dim, bias=False)
        self.state_y = nn.Linear(dim, memory_dim, bias=False)
        self.log_tau1 = nn.Parameter(torch.tensor(math.log(tau1_init)))
        self.log_tau2 = nn.Parameter(torch.tensor(math.log(tau2_init)))
        self.saliency = saliency
        if saliency == "learned":
            self.gate_x = nn.Linear(dim, 1)
            self.gate_y = nn.Linear(dim, 1)

    @property
    def tau1(self):
        return self.log_tau1.exp()

    @property
    def tau2(self):
        return self.log_tau2.exp()

    def saliency_weights(self, tokens, mask, gate):
        if self.saliency == "uniform":
            return uniform_saliency(mask).to(tokens.dtype)
        return torch.sigmoid(gate(tokens)).squeeze(-1) * mask

    def similarity(self, x_cls, y_cls):
        return instance_similarity_matrix(x_cls, y_cls, self.proj_x, self.proj_y)

    def icl(self, x_cls, y_cls):
        return icl_loss(self.similarity(x_cls, y_cls), self.tau1)

    def tcl(self, video_tokens, text_tokens, text_mask):
        alpha = self.saliency_weights(text_tokens, text_mask, getattr(self, "gate_y", None))
        video_mask = torch.ones(video_tokens.shape[:2], dtype=torch.bool, device=video_tokens.device)
        beta = self.saliency_weights(video_tokens, video_mask, getattr(self, "gate_x", None))
        return tcl_loss(video_tokens, text_tokens, text_mask, self.state_x, self.state_y, self.tau2,
                        alpha=alpha, beta=beta, video_mask=video_mask)
