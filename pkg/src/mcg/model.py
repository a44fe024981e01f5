"""The full generative VideoQA model and its inference entry points."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import Config
from .contrastive import ContrastiveHeads
from .fusion import ClassifierHead, Fusor, Generator, beam_decode, greedy_decode, vtm_predict
from .layers import init_weights
from .text import TextEncoder, Vocabulary, detokenize, encode_pieces, pad_batch, tokenize
from .video import VideoEncoder

# parameter-tree prefixes of the four main components
COMPONENTS = {"ivm": "video encoder", "iqm": "question encoder", "cfor": "fusor", "agor": "generator"}


class MCG(nn.Module):
    def __init__(self, cfg: Config, vocab: Vocabulary, answer_classes: list[str] | None = None):
        super().__init__()
        m = cfg.model
        self.cfg = cfg
        self.vocab = vocab
        self.ivm = VideoEncoder(m.dim, m.heads, m.video_depth, m.patch_size, m.max_frames,
                                m.max_resolution, m.mlp_ratio, m.timesformer_residuals)
        self.iqm = TextEncoder(len(vocab), m.dim, m.heads, m.text_depth, m.max_text_len, m.mlp_ratio)
        self.contrastive = ContrastiveHeads(m.dim, m.proj_dim, m.memory_dim, cfg.loss.tau1_init,
                                            cfg.loss.tau2_init, cfg.loss.saliency_provider)
        self.cfor = Fusor(m.dim, m.heads, m.fusion_depth, m.mlp_ratio)
        self.vtm_head = nn.Linear(m.dim, 2)
        self.agor = Generator(len(vocab), m.dim, m.heads, m.generator_depth,
                              m.max_text_len + m.max_answer_len + 2, m.mlp_ratio)
        self.answer_classes = list(answer_classes or [])
        if m.answer_head == "classifier":
            if not self.answer_classes:
                raise ValueError("the classifier head needs a closed answer set")
            self.classifier = ClassifierHead(m.dim, len(self.answer_classes))
        self.reset_parameters()

    def reset_parameters(self):
        std = self.cfg.model.init_std
        init_weights(self, std)
        for p in (self.ivm.embed.spatial_pos, self.ivm.embed.temporal_pos, self.ivm.embed.cls_token,
                  self.iqm.pos_embed, self.agor.pos_embed, self.cfor.fus_token):
            nn.init.trunc_normal_(p, std=std)

    @property
    def dtype(self):
        return self.vtm_head.weight.dtype

    # -- unimodal ---------------------------------------------------------

    def encode_video(self, frames):
        return self.ivm(torch.as_tensor(frames, dtype=self.dtype))

    def encode_text(self, ids, mask):
        return self.iqm(ids, mask)

    def fuse(self, text_tokens, text_mask, video_tokens):
        return self.cfor(text_tokens, text_mask, video_tokens)

    def condition(self, video_tokens, fused, fused_mask):
        """Keys/values the generator cross-attends to."""
        if self.cfg.model.generator_condition == "fused":
            return fused, fused_mask
        vmask = torch.ones(video_tokens.shape[:2], dtype=torch.bool, device=video_tokens.device)
        return torch.cat([video_tokens, fused], dim=1), torch.cat([vmask, fused_mask], dim=1)

    def tokenize(self, text):
        return tokenize(text, self.vocab, self.cfg.model.max_text_len)

    def answer_context(self, question: str) -> list[int]:
        """Question word pieces fed to the generator ahead of [GEN]."""
        return encode_pieces(question, self.vocab)[: self.cfg.model.max_text_len - 2]

    def class_index(self, answer: str) -> int:
        try:
            return self.answer_classes.index(answer)
        except ValueError:
            return 0

    def parameter_groups(self):
        groups = {}
        for name, p in self.named_parameters():
            groups.setdefault(name.split(".")[0], []).append((name, p))
        return groups


@dataclass
class Answer:
    text: str
    ids: list[int]
    truncated: bool
    logprob: float


@torch.no_grad()
def generate_answer(model: MCG, question: str, frames, mode=None, beam_width=None, max_len=None) -> Answer:
    """Encode, fuse, and decode an answer for one (video, question) pair.

    ``frames`` is a (T, H, W, 3) normalized clip.
    """
    dc = model.cfg.decode
    mode = mode or dc.mode
    beam_width = beam_width or dc.beam_width
    max_len = max_len or dc.max_len
    video = model.encode_video(torch.as_tensor(np.asarray(frames))[None])
    if model.cfg.model.answer_head == "classifier":
        fused, _ = _fuse_question(model, question, video)
        idx = int(np.argmax(model.classifier(fused)[0].double().cpu().numpy()))
        return Answer(model.answer_classes[idx], [], False, 0.0)
    fused, fmask = _fuse_question(model, question, video)
    cond, cmask = model.condition(video, fused, fmask)
    state = model.agor.init_state(model.answer_context(question), model.vocab.gen_id, cond, cmask)
    eos = model.vocab.eos_id
    if mode == "beam":
        state = beam_decode(model.agor, state, eos, max_len, beam_width)
    elif mode == "greedy":
        state = greedy_decode(model.agor, state, eos, max_len)
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    ids = state.ids[1:]
    return Answer(detokenize(ids, model.vocab), ids, not state.finished, state.logprob)


def _fuse_question(model, question, video):
    tok = model.tokenize(question)
    ids, mask = pad_batch([tok], model.vocab.pad_id)
    text = model.encode_text(ids, mask)
    return model.fuse(text, mask, video)


@torch.no_grad()
def score_choices(model: MCG, question: str, candidates: list[str], frames):
    """Multi-choice answering by video-text matching.

    Each candidate is appended to the question and scored; returns the index
    with the highest match probability (lowest index on ties) and all
    probabilities.
    """
    if not candidates:
        raise ValueError("no candidate answers to score")
    video = model.encode_video(torch.as_tensor(np.asarray(frames))[None])
    texts = [f"{question} {c}".strip() for c in candidates]
    ids, mask = pad_batch([model.tokenize(t) for t in texts], model.vocab.pad_id)
    text = model.encode_text(ids, mask)
    fused, _ = model.fuse(text, mask, video.expand(len(texts), -1, -1))
    probs = vtm_predict(fused, model.vtm_head)[:, 0].double().cpu().numpy()
    return int(np.argmax(probs)), probs


# -- external weights ------------------------------------------------------


def _canonical(key: str) -> str:
    # accept both "block3" and "blocks.3"
    return re.sub(r"\bblock(\d+)\b", r"blocks.\1", key)


def import_weights(model: MCG, archive, strict_shapes=True, verbose=True):
    """Copy arrays from an ``.npz`` archive (or mapping) keyed by dotted
    parameter paths, e.g. ``ivm.block3.spatial.qkv.weight``.

    Returns ``(matched, unmatched_archive_keys, untouched_model_keys)``.
    """
    if not isinstance(archive, dict):
        with np.load(archive) as data:
            archive = {k: data[k] for k in data.files}
    state = model.state_dict()
    matched, unmatched = [], []
    for key, value in archive.items():
        name = _canonical(key)
        if name in state and (not strict_shapes or tuple(state[name].shape) == tuple(np.shape(value))):
            with torch.no_grad():
                state[name].copy_(torch.as_tensor(np.asarray(value), dtype=state[name].dtype))
            matched.append(name)
        else:
            unmatched.append(key)
    untouched = sorted(set(state) - set(matched))
    if verbose:
        print(f"weight import: {len(matched)} matched, {len(unmatched)} unmatched archive keys, "
              f"{len(untouched)} model arrays left at their initial values")
        for key in unmatched:
            print(f"  unmatched: {key}")
    return matched, unmatched, untouched
