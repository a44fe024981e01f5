"""Answer-matching metrics: top-1 accuracy and WUPS over an is-a taxonomy."""

from __future__ import annotations

import logging
import math
import re
import string
from collections import deque
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

ARTICLES = ("a", "an", "the")
DOWN_WEIGHT = 0.1
_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and leading articles, collapse whitespace."""
    words = _PUNCT.sub(" ", text.lower()).split()
    while words and words[0] in ARTICLES:
        words = words[1:]
    return " ".join(words)


def top1_accuracy(predictions, golds) -> float:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} gold answers")
    if not golds:
        return 0.0
    hits = sum(normalize_answer(p) == normalize_answer(g) for p, g in zip(predictions, golds))
    return hits / len(golds)


class TaxonomyError(ValueError):
    pass


class Taxonomy:
    """Directed acyclic is-a graph with a single root and word senses."""

    def __init__(self, parents: dict[str, list[str]], senses: dict[str, list[str]] | None = None):
        self.parents = {c: list(ps) for c, ps in parents.items()}
        for c, ps in list(self.parents.items()):
            for p in ps:
                if p not in self.parents:
                    raise TaxonomyError(f"concept {c!r} has unknown parent {p!r}")
        roots = [c for c, ps in self.parents.items() if not ps]
        if len(roots) != 1:
            raise TaxonomyError(f"expected exactly one root, found {roots}")
        self.root = roots[0]
        self.depth = self._depths()
        self.senses = {c: [c] for c in self.parents}
        for word, concepts in (senses or {}).items():
            for c in concepts:
                if c not in self.parents:
                    raise TaxonomyError(f"word {word!r} maps to unknown concept {c!r}")
            self.senses[word] = list(concepts)
        self._ancestors = {c: self._collect_ancestors(c) for c in self.parents}
        self._warned: set[str] = set()

    def _depths(self) -> dict[str, int]:
        children: dict[str, list[str]] = {c: [] for c in self.parents}
        for c, ps in self.parents.items():
            for p in ps:
                children[p].append(c)
        # shortest distance from the root, root depth 1
        depth = {self.root: 1}
        queue = deque([self.root])
        while queue:
            c = queue.popleft()
            for child in children[c]:
                if child not in depth:
                    depth[child] = depth[c] + 1
                    queue.append(child)
        unreachable = set(self.parents) - set(depth)
        if unreachable:
            raise TaxonomyError(f"concepts unreachable from the root (cycle?): {sorted(unreachable)[:5]}")
        self._check_acyclic()
        return depth

    def _check_acyclic(self):
        state: dict[str, int] = {}

        def visit(c):
            state[c] = 1
            for p in self.parents[c]:
                if state.get(p) == 1:
                    raise TaxonomyError(f"cycle through {p!r}")
                if p not in state:
                    visit(p)
            state[c] = 2

        for c in self.parents:
            if c not in state:
                visit(c)

    def _collect_ancestors(self, concept) -> set[str]:
        seen, stack = {concept}, [concept]
        while stack:
            for p in self.parents[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def __contains__(self, word):
        return word in self.senses

    def concept_similarity(self, a: str, b: str) -> float:
        common = self._ancestors[a] & self._ancestors[b]
        lcs_depth = max(self.depth[c] for c in common)
        return 2.0 * lcs_depth / (self.depth[a] + self.depth[b])

    def wup(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        missing = [w for w in (a, b) if w not in self.senses]
        if missing:
            for w in missing:
                if w not in self._warned:
                    self._warned.add(w)
                    log.info("word %r not in taxonomy; falling back to exact match", w)
            return 0.0
        return max(self.concept_similarity(x, y) for x in self.senses[a] for y in self.senses[b])

    @classmethod
    def from_text(cls, text: str) -> "Taxonomy":
        parents: dict[str, list[str]] = {}
        senses: dict[str, list[str]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                word, _, rest = line.partition("=")
                senses.setdefault(word.strip(), []).extend(rest.split())
            else:
                concept, _, rest = line.partition("<")
                concept = concept.strip()
                if not concept:
                    raise TaxonomyError(f"line {lineno}: missing concept name")
                parents.setdefault(concept, []).extend(rest.split())
        return cls(parents, senses)

    @classmethod
    def load(cls, path) -> "Taxonomy":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def toy_taxonomy() -> Taxonomy:
    return Taxonomy.from_text(resources.files("mcg.data").joinpath("toy_taxonomy.txt").read_text("utf-8"))


def wup_similarity(a: str, b: str, taxonomy: Taxonomy) -> float:
    return taxonomy.wup(a.lower(), b.lower())


def _thresholded(a, b, threshold, taxonomy):
    score = taxonomy.wup(a, b)
    return score if score >= threshold else DOWN_WEIGHT * score


def wups_pair(prediction: str, gold: str, threshold: float, taxonomy: Taxonomy) -> float:
    """Set-level WUPS of one answer pair (products over tokens, min of both directions)."""
    pred = normalize_answer(prediction).split()
    ref = normalize_answer(gold).split()
    if not pred or not ref:
        return 0.0
    forward = math.prod(max(_thresholded(a, t, threshold, taxonomy) for t in ref) for a in pred)
    backward = math.prod(max(_thresholded(a, t, threshold, taxonomy) for a in pred) for t in ref)
    return min(forward, backward)


def wups_at(predictions, golds, threshold: float, taxonomy: Taxonomy) -> float:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} gold answers")
    if not golds:
        return 0.0
    scores = [wups_pair(p, g, threshold, taxonomy) for p, g in zip(predictions, golds)]
    return math.fsum(scores) / len(scores)
