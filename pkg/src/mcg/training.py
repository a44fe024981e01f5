"""Joint optimization of the contrastive, matching and language-modeling objectives."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .config import Config
from .contrastive import icl_loss, mcl_loss
from .fusion import ClassifierHead, classifier_loss, lm_loss, sample_negatives, vtm_loss, vtm_predict
from .manifest import ManifestRecord
from .model import MCG
from .sampling import load_clip
from .text import encode_pieces, pad_batch

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class LossBundle:
    l_icl: float
    l_tcl: float
    l_mcl: float
    l_vtm: float
    l_lm: float
    total: float

    def as_dict(self):
        return asdict(self)


@dataclass
class Batch:
    frames: torch.Tensor  # (B, T, H, W, 3)
    text_ids: torch.Tensor  # paired caption / question+answer, with [CLS] ... [SEP]
    text_mask: torch.Tensor
    question_ids: torch.Tensor
    question_mask: torch.Tensor
    gen_input: torch.Tensor  # question pieces, [GEN], answer pieces
    gen_target: torch.Tensor  # gen_input shifted left, ending in [EOS]
    gen_input_mask: torch.Tensor
    gen_loss_mask: torch.Tensor  # answer positions only
    answer_labels: torch.Tensor  # closed-set class index (classifier variant)

    def __len__(self):
        return self.frames.shape[0]


def _scalar(value) -> float:
    return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)


def seed_for(*parts) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def collate(model: MCG, frames, texts, questions, answers) -> Batch:
    vocab = model.vocab
    cap_ids, cap_mask = pad_batch([model.tokenize(t) for t in texts], vocab.pad_id)
    q_ids, q_mask = pad_batch([model.tokenize(q) for q in questions], vocab.pad_id)
    max_answer = model.cfg.model.max_answer_len
    seqs, starts = [], []
    for q, a in zip(questions, answers):
        context = model.answer_context(q)
        answer = encode_pieces(a, vocab)[:max_answer]
        seqs.append(context + [vocab.gen_id] + answer + [vocab.eos_id])
        starts.append(len(context))
    length = max(len(s) for s in seqs) - 1
    b = len(seqs)
    gen_in = torch.full((b, length), vocab.pad_id, dtype=torch.long)
    gen_tgt = torch.full((b, length), vocab.pad_id, dtype=torch.long)
    in_mask = torch.zeros((b, length), dtype=torch.bool)
    loss_mask = torch.zeros((b, length), dtype=torch.bool)
    for row, (seq, start) in enumerate(zip(seqs, starts)):
        n = len(seq) - 1
        gen_in[row, :n] = torch.tensor(seq[:-1])
        gen_tgt[row, :n] = torch.tensor(seq[1:])
        in_mask[row, :n] = True
        loss_mask[row, start:n] = True
    labels = torch.tensor([model.class_index(a) for a in answers], dtype=torch.long)
    frames = torch.as_tensor(np.stack(frames), dtype=model.dtype)
    return Batch(frames, cap_ids, cap_mask, q_ids, q_mask, gen_in, gen_tgt, in_mask, loss_mask, labels)


def load_batch(model: MCG, records: list[ManifestRecord], cfg: Config, mode="train", seed=0) -> Batch:
    frames = []
    for k, rec in enumerate(records):
        clip = load_clip(rec.video, cfg.frames, cfg.resolution, cfg.data.mean, cfg.data.std, mode=mode,
                         seed=seed_for(seed, k), ratio=cfg.data.head_ratio,
                         allow_repeat=cfg.data.allow_repeat, patch_size=cfg.model.patch_size)
        frames.append(clip.frames)
    return collate(model, frames, [r.text for r in records], [r.question for r in records],
                   [r.gold for r in records])


def effective_weights(cfg: Config):
    """(lambda1, lambda2, lambda3); the fine-tuning stage keeps only the LM term."""
    loss = cfg.loss
    if cfg.train.stage == "finetune":
        return 0.0, 0.0, loss.lambda3
    return loss.lambda1, loss.lambda2, loss.lambda3


def total_loss(components: dict, cfg: Config):
    """lambda1 * MCL + lambda2 * VTM + lambda3 * LM."""
    for name in ("l_mcl", "l_vtm", "l_lm"):
        value = components[name]
        if not math.isfinite(_scalar(value)):
            raise NonFiniteError(f"non-finite loss component {name} = {_scalar(value)}")
    lam1, lam2, lam3 = effective_weights(cfg)
    return lam1 * components["l_mcl"] + lam2 * components["l_vtm"] + lam3 * components["l_lm"]


def compute_losses(model: MCG, batch: Batch, cfg: Config, seed=0) -> dict:
    """Every loss component as a tensor.

    Terms whose weight is zero are evaluated without autograd so their
    exclusive parameters receive no gradient at all.
    """
    lam1, lam2, lam3 = effective_weights(cfg)
    theta1, theta2 = cfg.loss.theta1, cfg.loss.theta2
    video = model.encode_video(batch.frames)
    text = model.encode_text(batch.text_ids, batch.text_mask)
    heads = model.contrastive

    def maybe_grad(active):
        return torch.enable_grad() if active and torch.is_grad_enabled() else torch.no_grad()

    with maybe_grad(lam1 > 0 and theta1 > 0):
        sim = heads.similarity(video[:, 0], text[:, 0])
        l_icl = icl_loss(sim, heads.tau1)
    with maybe_grad(lam1 > 0 and theta2 > 0):
        l_tcl = heads.tcl(video[:, 1:], text[:, 1:], batch.text_mask[:, 1:])
    l_mcl = mcl_loss(l_icl, l_tcl, theta1, theta2)

    with maybe_grad(lam2 > 0):
        if len(batch) >= 2:
            neg = sample_negatives(len(batch), sim.detach().cpu().numpy(), cfg.loss.negatives,
                                   seed=seed, tau=float(heads.tau1.detach()))
            neg = torch.as_tensor(neg)
            fused_pos, _ = model.fuse(text, batch.text_mask, video)
            fused_neg, _ = model.fuse(text[neg], batch.text_mask[neg], video)
            l_vtm = vtm_loss(vtm_predict(fused_pos, model.vtm_head), vtm_predict(fused_neg, model.vtm_head))
        else:
            l_vtm = torch.zeros((), dtype=video.dtype)

    with maybe_grad(lam3 > 0):
        question = model.encode_text(batch.question_ids, batch.question_mask)
        fused_q, fq_mask = model.fuse(question, batch.question_mask, video)
        if isinstance(getattr(model, "classifier", None), ClassifierHead):
            l_lm = classifier_loss(model.classifier(fused_q), batch.answer_labels)
        else:
            cond, cmask = model.condition(video, fused_q, fq_mask)
            logits = model.agor(batch.gen_input, batch.gen_input_mask, cond, cmask)
            l_lm = lm_loss(logits, batch.gen_target, batch.gen_loss_mask)

    out = {"l_icl": l_icl, "l_tcl": l_tcl, "l_mcl": l_mcl, "l_vtm": l_vtm, "l_lm": l_lm}
    out["total"] = total_loss(out, cfg)
    return out


def lr_schedule(step: int, cfg: Config) -> float:
    """Linear warmup from 0 to the peak, then linear decay to the final rate."""
    s = cfg.sched
    total = cfg.train.steps
    warmup = s.warmup_fraction * total
    if warmup > 0 and step < warmup:
        return s.peak_lr * step / warmup
    if total <= warmup:
        return s.peak_lr
    frac = min(1.0, (step - warmup) / (total - warmup))
    return s.peak_lr + (s.final_lr - s.peak_lr) * frac


def make_optimizer(model: MCG, cfg: Config):
    s = cfg.sched
    return torch.optim.AdamW(model.parameters(), lr=s.peak_lr, betas=(s.beta1, s.beta2), eps=s.eps,
                             weight_decay=s.weight_decay)


def train_step(model: MCG, optimizer, batch: Batch, cfg: Config, step: int) -> LossBundle:
    """One forward/backward/AdamW update at ``lr_schedule(step)``."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    losses = compute_losses(model, batch, cfg, seed=seed_for(cfg.train.seed, step, 1))
    if losses["total"].requires_grad:
        losses["total"].backward()
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            optimizer.zero_grad(set_to_none=True)
            raise NonFiniteError(f"non-finite gradient in {name}; step {step} rejected")
    if cfg.sched.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.sched.grad_clip)
    lr = lr_schedule(step, cfg)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    return LossBundle(**{k: _scalar(v) for k, v in losses.items()})


class Trainer:
    """Step loop over a manifest with seed-determined batches."""

    def __init__(self, model: MCG, records: list[ManifestRecord], cfg: Config, optimizer=None, step=0):
        self.model = model
        self.records = records
        self.cfg = cfg
        self.optimizer = optimizer or make_optimizer(model, cfg)
        self.step = step
        self.history: list[LossBundle] = []

    def batch_indices(self, step: int) -> np.ndarray:
        n = len(self.records)
        rng = np.random.default_rng(seed_for(self.cfg.train.seed, step, 0))
        size = min(self.cfg.train.batch_size, n)
        return np.sort(rng.choice(n, size=size, replace=False))

    def batch(self, step: int) -> Batch:
        recs = [self.records[i] for i in self.batch_indices(step)]
        return load_batch(self.model, recs, self.cfg, mode="train", seed=seed_for(self.cfg.train.seed, step, 2))

    def run(self, steps: int | None = None, callback=None) -> list[LossBundle]:
        end = self.cfg.train.steps if steps is None else self.step + steps
        while self.step < end:
            bundle = train_step(self.model, self.optimizer, self.batch(self.step), self.cfg, self.step)
            self.history.append(bundle)
            if self.cfg.train.log_every and self.step % self.cfg.train.log_every == 0:
                log.info("step %d lr %.2e %s", self.step, lr_schedule(self.step, self.cfg),
                         " ".join(f"{k}={v:.4f}" for k, v in bundle.as_dict().items()))
            if callback is not None:
                callback(self.step, bundle)
            self.step += 1
        return self.history


def build_model(cfg: Config, vocab, answer_classes=None, seed=None) -> MCG:
    torch.manual_seed(cfg.train.seed if seed is None else seed)
    model = MCG(cfg, vocab, answer_classes)
    return model.to(DTYPES[cfg.train.dtype])


def answer_classes_from(records) -> list[str]:
    """Closed answer set for the classifier variant; index 0 is the unknown class."""
    return ["[UNK]"] + sorted({r.gold for r in records})
