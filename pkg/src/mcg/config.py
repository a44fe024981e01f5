"""Run configuration.

Config files are UTF-8 text made of ``key = value`` lines with dotted keys
(``train.stage = finetune``, ``loss.lambda1 = 0.5``). Blank lines and lines
starting with ``#`` are ignored. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class ConfigError(ValueError):
    pass


def _bundled_defaults() -> dict[str, str]:
    text = resources.files("mcg.data").joinpath("defaults.cfg").read_text(encoding="utf-8")
    return _parse_lines(text.splitlines(), "defaults.cfg")


def _bundled_triple(key: str) -> tuple[float, float, float]:
    return _coerce(_bundled_defaults()[key], tuple[float, float, float], key)


@dataclass
class ModelConfig:
    dim: int = 768
    heads: int = 12
    mlp_ratio: float = 4.0
    patch_size: int = 16
    video_depth: int = 12
    text_depth: int = 6
    fusion_depth: int = 6
    generator_depth: int = 6
    proj_dim: int = 256
    memory_dim: int = 256
    max_frames: int = 8
    max_resolution: int = 384
    max_text_len: int = 40
    max_answer_len: int = 8
    # FFN(s) + t when False; the conventional s + FFN(s) when True
    timesformer_residuals: bool = False
    generator_condition: str = "video+fused"
    answer_head: str = "generator"
    # std of the truncated-normal init; 0.02 suits ViT/BERT widths, narrow models want more
    init_std: float = 0.02


@dataclass
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    theta1: float = 1.0
    theta2: float = 1.0
    tau1_init: float = 0.07
    tau2_init: float = 0.07
    saliency_provider: str = "uniform"
    negatives: str = "uniform"


@dataclass
class SchedConfig:
    peak_lr: float = 1e-4
    final_lr: float = 1e-5
    warmup_fraction: float = 0.1
    weight_decay: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    batch_size: int = 16
    steps: int = 1000
    seed: int = 0
    log_every: int = 50
    checkpoint: str = ""
    init_checkpoint: str = ""
    dtype: str = "float32"


@dataclass
class DataConfig:
    manifest: str = ""
    vocab: str = ""
    answers: str = ""
    frames: int = 0  # 0 = stage default
    resolution: int = 0  # 0 = stage default
    head_ratio: float = 0.3
    allow_repeat: bool = False
    mean: tuple[float, float, float] = field(default_factory=lambda: _bundled_triple("data.mean"))
    std: tuple[float, float, float] = field(default_factory=lambda: _bundled_triple("data.std"))


@dataclass
class DecodeConfig:
    mode: str = "greedy"
    beam_width: int = 1
    max_len: int = 8


@dataclass
class EvalConfig:
    taxonomy: str = ""
    out: str = ""


# frames and resolution per training stage
STAGE_DEFAULTS = {
    "pretrain": {"frames": 4, "resolution": 224},
    "finetune": {"frames": 8, "resolution": 384},
}


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sched: SchedConfig = field(default_factory=SchedConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def frames(self) -> int:
        return self.data.frames or STAGE_DEFAULTS[self.train.stage]["frames"]

    @property
    def resolution(self) -> int:
        return self.data.resolution or STAGE_DEFAULTS[self.train.stage]["resolution"]

    def validate(self) -> None:
        if self.train.stage not in STAGE_DEFAULTS:
            raise ConfigError(f"train.stage must be pretrain or finetune, got {self.train.stage!r}")
        if self.resolution % self.model.patch_size:
            raise ConfigError(
                f"resolution {self.resolution} is not divisible by patch size {self.model.patch_size}"
            )
        if self.model.dim % self.model.heads:
            raise ConfigError(f"model.dim {self.model.dim} not divisible by model.heads {self.model.heads}")
        if self.frames > self.model.max_frames:
            raise ConfigError(f"{self.frames} frames exceed model.max_frames={self.model.max_frames}")
        if self.resolution > self.model.max_resolution:
            raise ConfigError(
                f"resolution {self.resolution} exceeds model.max_resolution={self.model.max_resolution}"
            )
        if not self.model.init_std > 0:
            raise ConfigError(f"model.init_std must be positive, got {self.model.init_std}")
        for name in ("lambda1", "lambda2", "lambda3", "theta1", "theta2"):
            if getattr(self.loss, name) < 0:
                raise ConfigError(f"loss.{name} must be non-negative")
        if self.loss.saliency_provider not in ("uniform", "learned"):
            raise ConfigError(f"unknown loss.saliency_provider {self.loss.saliency_provider!r}")
        if self.loss.negatives not in ("uniform", "hard"):
            raise ConfigError(f"unknown loss.negatives {self.loss.negatives!r}")
        if self.model.generator_condition not in ("video+fused", "fused"):
            raise ConfigError(f"unknown model.generator_condition {self.model.generator_condition!r}")
        if self.model.answer_head not in ("generator", "classifier"):
            raise ConfigError(f"unknown model.answer_head {self.model.answer_head!r}")
        if self.decode.mode not in ("greedy", "beam"):
            raise ConfigError(f"unknown decode.mode {self.decode.mode!r}")
        if self.decode.max_len > self.model.max_answer_len:
            raise ConfigError(
                f"decode.max_len {self.decode.max_len} exceeds model.max_answer_len {self.model.max_answer_len}"
            )
        if not 1 <= self.decode.beam_width <= 5:
            raise ConfigError("decode.beam_width must be in [1, 5]")

    def set(self, key: str, value) -> None:
        section, _, name = key.partition(".")
        sub = getattr(self, section, None) if section in _SECTIONS else None
        if sub is None or not name or name not in {f.name for f in dataclasses.fields(sub)}:
            raise ConfigError(f"unknown config key {key!r}")
        hint = typing.get_type_hints(type(sub))[name]
        setattr(sub, name, _coerce(value, hint, key) if isinstance(value, str) else value)

    def items(self):
        for section in _SECTIONS:
            sub = getattr(self, section)
            for f in dataclasses.fields(sub):
                yield f"{section}.{f.name}", getattr(sub, f.name)

    def to_text(self) -> str:
        lines = []
        for key, value in self.items():
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_SECTIONS = ("model", "loss", "sched", "train", "data", "decode", "eval")


def _parse_lines(lines, source) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _coerce(text: str, hint, key: str):
    try:
        if hint is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if typing.get_origin(hint) is tuple:
            parts = [p.strip() for p in text.strip("()[] ").split(",") if p.strip()]
            args = typing.get_args(hint)
            if len(parts) != len(args):
                raise ValueError(text)
            return tuple(t(p) for t, p in zip(args, parts))
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def parse_config(text: str, base: Config | None = None, source: str = "<string>") -> Config:
    cfg = base if base is not None else Config()
    for key, value in _parse_lines(text.splitlines(), source).items():
        cfg.set(key, value)
    return cfg


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> Config:
    """Build a config from defaults, an optional file, then explicit overrides.

    With ``path=None`` the ``MCG_CONFIG`` environment variable is consulted.
    """
    cfg = Config()
    path = path or os.environ.get("MCG_CONFIG")
    if path:
        cfg = parse_config(Path(path).read_text(encoding="utf-8"), cfg, str(path))
    for key, value in (overrides or {}).items():
        cfg.set(key, value)
    cfg.validate()
    return cfg


def toy_config(**overrides) -> Config:
    """Small configuration used by tests, demos and the overfit run."""
    text = resources.files("mcg.data").joinpath("toy.cfg").read_text(encoding="utf-8")
    cfg = parse_config(text, source="toy.cfg")
    for key, value in overrides.items():
        cfg.set(key.replace("__", "."), value)
    cfg.validate()
    return cfg
