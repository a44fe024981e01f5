"""Tokenizer and intra-question (bidirectional) text encoder.

Vocabulary files hold one token per line; the zero-based line number, counted
after the header, is the token id. The header is the leading block of lines
starting with ``#``. Lines of the form ``#! role = token`` declare the
reserved tokens (roles: pad, unk, cls, sep, mask, gen, eos).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import torch
from torch import nn

from .layers import EncoderBlock

RESERVED_ROLES = ("pad", "unk", "cls", "sep", "mask", "gen", "eos")
CONTINUATION = "##"
_WORD_RE = re.compile(r"\w+|[^\w\s]")


class VocabularyError(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens, reserved: dict[str, str]):
        self.tokens = list(tokens)
        self.index = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise VocabularyError(f"duplicate vocabulary entry {tok!r}")
            self.index[tok] = i
        missing = [r for r in RESERVED_ROLES if r not in reserved]
        if missing:
            raise VocabularyError(f"vocabulary header lacks reserved roles {missing}")
        ids = {}
        for role, tok in reserved.items():
            if tok not in self.index:
                raise VocabularyError(f"reserved token {tok!r} ({role}) is not in the vocabulary")
            ids[role] = self.index[tok]
        if len(set(ids.values())) != len(ids):
            raise VocabularyError("reserved tokens must have distinct ids")
        self.reserved = dict(reserved)
        self.pad_id, self.unk_id, self.cls_id = ids["pad"], ids["unk"], ids["cls"]
        self.sep_id, self.mask_id, self.gen_id, self.eos_id = ids["sep"], ids["mask"], ids["gen"], ids["eos"]
        self.special_ids = frozenset(ids.values())

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        reserved, start = {}, 0
        while start < len(lines) and lines[start].startswith("#"):
            line = lines[start]
            if line.startswith("#!"):
                role, sep, tok = line[2:].partition("=")
                if not sep:
                    raise VocabularyError(f"bad reserved declaration {line!r}")
                reserved[role.strip()] = tok.strip()
            start += 1
        tokens = [line.strip() for line in lines[start:]]
        if any(not t for t in tokens):
            raise VocabularyError("blank vocabulary line")
        return cls(tokens, reserved)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        head = ["# mcg vocabulary"] + [f"#! {role} = {tok}" for role, tok in self.reserved.items()]
        return "\n".join(head + self.tokens) + "\n"


def toy_vocabulary() -> Vocabulary:
    return Vocabulary.from_text(resources.files("mcg.data").joinpath("toy_vocab.txt").read_text("utf-8"))


@dataclass
class TokenizedText:
    ids: list[int]
    mask: list[bool]


def split_words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def wordpiece(word: str, vocab: Vocabulary) -> list[int]:
    """Greedy longest-match segmentation; the whole word becomes unk on failure."""
    pieces, start = [], 0
    while start < len(word):
        for end in range(len(word), start, -1):
            piece = word[start:end] if start == 0 else CONTINUATION + word[start:end]
            if piece in vocab.index:
                pieces.append(vocab.index[piece])
                start = end
                break
        else:
            return [vocab.unk_id]
    return pieces


def tokenize(text: str, vocab: Vocabulary, max_len: int = 40) -> TokenizedText:
    """``[CLS] pieces... [SEP]``, truncated at the tail to ``max_len`` ids."""
    if max_len < 2:
        raise ValueError("max_len must leave room for [CLS] and [SEP]")
    body = [i for word in split_words(text) for i in wordpiece(word, vocab)]
    ids = [vocab.cls_id] + body[: max_len - 2] + [vocab.sep_id]
    return TokenizedText(ids, [True] * len(ids))


def encode_pieces(text: str, vocab: Vocabulary) -> list[int]:
    """Word pieces of ``text`` without any markers."""
    return [i for word in split_words(text) for i in wordpiece(word, vocab)]


def detokenize(ids, vocab: Vocabulary) -> str:
    words: list[str] = []
    for i in ids:
        i = int(i)
        if i in vocab.special_ids:
            continue
        tok = vocab.tokens[i]
        if tok.startswith(CONTINUATION) and words:
            words[-1] += tok[len(CONTINUATION):]
        else:
            words.append(tok)
    return " ".join(words)


def pad_batch(seqs: list[TokenizedText], pad_id: int):
    """Right-pad to a (B, L) id tensor and a boolean mask."""
    length = max(len(s.ids) for s in seqs)
    ids = torch.full((len(seqs), length), pad_id, dtype=torch.long)
    mask = torch.zeros((len(seqs), length), dtype=torch.bool)
    for row, s in enumerate(seqs):
        ids[row, : len(s.ids)] = torch.tensor(s.ids)
        mask[row, : len(s.ids)] = torch.tensor(s.mask)
    return ids, mask


class TextEncoder(nn.Module):
    def __init__(self, vocab_size, dim, heads, depth, max_len, mlp_ratio=4.0):
        super().__init__()
        self.token_embed = nn.Embedding(vocab_size, dim)
        self.pos_embed = nn.Parameter(torch.zeros(max_len, dim))
        self.blocks = nn.ModuleList(EncoderBlock(dim, heads, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, ids, mask):
        vocab_size = self.token_embed.num_embeddings
        if ids.numel() and int(ids.max()) >= vocab_size:
            raise VocabularyError(f"vocabulary overflow: id {int(ids.max())} >= {vocab_size}")
        if ids.shape[1] > self.pos_embed.shape[0]:
            raise ValueError(f"text length {ids.shape[1]} exceeds {self.pos_embed.shape[0]} positions")
        x = self.token_embed(ids) + self.pos_embed[: ids.shape[1]]
        for block in self.blocks:
            x = block(x, mask)
        return self.norm(x)
