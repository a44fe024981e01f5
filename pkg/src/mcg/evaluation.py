"""Evaluation loop and metrics report."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

from .manifest import ManifestRecord
from .metrics import Taxonomy, normalize_answer, toy_taxonomy, wups_at
from .model import MCG, generate_answer, score_choices
from .sampling import DecodeError, SamplingError, load_clip

log = logging.getLogger(__name__)

UNTAGGED = "untagged"


@dataclass
class MetricsReport:
    overall: float
    per_type: dict[str, float]
    wups_0_9: float
    wups_0_0: float
    counts: dict
    predictions: list[dict] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_type": dict(sorted(self.per_type.items())),
            "wups_0_9": self.wups_0_9,
            "wups_0_0": self.wups_0_0,
            "counts": self.counts,
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def predict_record(model: MCG, rec: ManifestRecord, frames, decode=None) -> str:
    decode = decode or model.cfg.decode
    if rec.multi_choice:
        best, _ = score_choices(model, rec.question, rec.choices, frames)
        return rec.choices[best]
    return generate_answer(model, rec.question, frames, mode=decode.mode, beam_width=decode.beam_width,
                           max_len=decode.max_len).text


def evaluate(model: MCG, records: list[ManifestRecord], decode=None, taxonomy: Taxonomy | None = None) -> MetricsReport:
    """Answer every record and aggregate accuracy, per-type accuracy and WUPS."""
    cfg = model.cfg
    taxonomy = taxonomy or toy_taxonomy()
    model.eval()
    preds, golds, tags, rows = [], [], [], []
    failed = 0
    for rec in records:
        try:
            clip = load_clip(rec.video, cfg.frames, cfg.resolution, cfg.data.mean, cfg.data.std, mode="eval",
                             ratio=cfg.data.head_ratio, allow_repeat=cfg.data.allow_repeat,
                             patch_size=cfg.model.patch_size)
        except (DecodeError, SamplingError, OSError) as exc:
            log.warning("record %s skipped: %s", rec.id, exc)
            failed += 1
            continue
        pred = predict_record(model, rec, clip.frames, decode)
        preds.append(pred)
        golds.append(rec.gold)
        tags.append(rec.qtype or UNTAGGED)
        rows.append({"id": rec.id, "prediction": pred, "gold": rec.gold})

    hits = [normalize_answer(p) == normalize_answer(g) for p, g in zip(preds, golds)]
    per_type, per_count = {}, {}
    for tag in sorted(set(tags)):
        idx = [i for i, t in enumerate(tags) if t == tag]
        per_count[tag] = len(idx)
        per_type[tag] = math.fsum(hits[i] for i in idx) / len(idx)
    n = len(hits)
    counts = {"total": len(records), "evaluated": n, "failed": failed, "per_type": per_count}
    return MetricsReport(
        overall=math.fsum(hits) / n if n else 0.0,
        per_type=per_type,
        wups_0_9=wups_at(preds, golds, 0.9, taxonomy),
        wups_0_0=wups_at(preds, golds, 0.0, taxonomy),
        counts=counts,
        predictions=rows,
    )
