"""Dataset manifests: one JSON object per line.

Required keys: ``id``, ``video``, ``question`` and either ``answer``
(open-ended) or ``answer_index`` + ``choices`` (multi-choice). Optional:
``qtype`` (category tag) and ``caption`` (paired description used by the
contrastive and matching objectives). Relative video paths are resolved
against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass
class ManifestRecord:
    id: str
    video: str
    question: str
    answer: str | None = None
    answer_index: int | None = None
    choices: list[str] = field(default_factory=list)
    qtype: str | None = None
    caption: str | None = None

    @property
    def multi_choice(self) -> bool:
        return self.answer_index is not None

    @property
    def gold(self) -> str:
        return self.choices[self.answer_index] if self.multi_choice else self.answer

    @property
    def text(self) -> str:
        """Text paired with the video for contrastive and matching losses."""
        return self.caption or f"{self.question} {self.gold}"

    def to_json(self) -> dict:
        out = {"id": self.id, "video": self.video, "question": self.question}
        if self.multi_choice:
            out["answer_index"] = self.answer_index
            out["choices"] = self.choices
        else:
            out["answer"] = self.answer
        if self.qtype is not None:
            out["qtype"] = self.qtype
        if self.caption is not None:
            out["caption"] = self.caption
        return out


def _record(obj, base: Path, lineno: int) -> ManifestRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise ManifestError(f"line {lineno}: missing string 'id'")
    for key in ("video", "question"):
        if not isinstance(obj.get(key), str):
            raise ManifestError(f"record {rid!r} (line {lineno}): missing string {key!r}")
    has_open = "answer" in obj
    has_choice = "answer_index" in obj or "choices" in obj
    if has_open == has_choice:
        raise ManifestError(
            f"record {rid!r} (line {lineno}): needs exactly one of 'answer' or 'answer_index'+'choices'"
        )
    if has_choice:
        choices, idx = obj.get("choices"), obj.get("answer_index")
        if not isinstance(choices, list) or not choices or not isinstance(idx, int) or not 0 <= idx < len(choices):
            raise ManifestError(f"record {rid!r} (line {lineno}): bad answer_index/choices")
    video = Path(obj["video"])
    if not video.is_absolute():
        video = base / video
    return ManifestRecord(
        id=rid,
        video=str(video),
        question=obj["question"],
        answer=obj.get("answer"),
        answer_index=obj.get("answer_index"),
        choices=list(obj.get("choices") or []),
        qtype=obj.get("qtype"),
        caption=obj.get("caption"),
    )


def load_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            rec = _record(obj, path.parent, lineno)
            if rec.id in seen:
                raise ManifestError(f"line {lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def write_manifest(path, records, relative_to=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = rec.to_json()
            if relative_to is not None:
                obj["video"] = str(Path(obj["video"]).relative_to(relative_to))
            fh.write(json.dumps(obj) + "\n")
