"""Model/training configuration presets.

The "desk" presets are small enough to pretrain on a laptop CPU in
minutes; the "paper-shapes" presets reproduce the published layer
dimensions and exist for shape and checkpoint tests only, never for
desk-scale training.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import DataError


@dataclass(frozen=True)
class CtcConfig:
    kind: str = "ctc"
    feat_dim: int = 60
    hidden: int = 64
    layers: int = 2
    vocab: int = 200  # CTC output width is vocab + 1 (blank last)

    @property
    def output_dim(self) -> int:
        return self.vocab + 1


@dataclass(frozen=True)
class LasConfig:
    kind: str = "las"
    feat_dim: int = 60
    dim: int = 64
    ff_dim: int = 128
    heads: int = 2
    enc_blocks: int = 2
    dec_blocks: int = 1
    vocab: int = 200  # BOS/EOS appended as ids vocab, vocab+1

    @property
    def output_dim(self) -> int:
        return self.vocab + 2


def ctc_desk(vocab: int = 200, feat_dim: int = 60) -> CtcConfig:
    return CtcConfig(feat_dim=feat_dim, hidden=64, layers=2, vocab=vocab)


def las_desk(vocab: int = 200, feat_dim: int = 60) -> LasConfig:
    return LasConfig(feat_dim=feat_dim, dim=64, ff_dim=128, heads=2,
                     enc_blocks=2, dec_blocks=1, vocab=vocab)


def ctc_paper_shapes() -> CtcConfig:
    return CtcConfig(feat_dim=240, hidden=700, layers=12, vocab=5000)


def las_paper_shapes() -> LasConfig:
    # published head count and model width; head dim follows as 512/4=128
    return LasConfig(feat_dim=240, dim=512, ff_dim=2048, heads=4,
                     enc_blocks=10, dec_blocks=2, vocab=5000)


def model_config_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "ctc":
        return CtcConfig(**d)
    if kind == "las":
        return LasConfig(**d)
    raise DataError(f"unknown model kind {kind!r}")


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 5
    grad_clip: float = 50.0  # safety net against spikes; must not bind every step
    seed: int = 0
    spec_augment: bool = True
    sa_time_mask: int = 8
    sa_freq_mask: int = 8
    sa_time_stripes: int = 1
    sa_freq_stripes: int = 1
    label_smoothing: float = 0.1  # LAS only

    def __post_init__(self):
        # lr == 0 is allowed: it makes fine-tuning a provable no-op
        if self.batch_size < 1 or self.lr < 0 or self.epochs < 0 or self.grad_clip <= 0:
            raise DataError("invalid training config")


def pretrain_defaults(seed: int = 0, **overrides) -> TrainConfig:
    return TrainConfig(lr=1e-3, seed=seed, **overrides)


def finetune_defaults(seed: int = 0, **overrides) -> TrainConfig:
    return TrainConfig(lr=1e-4, seed=seed, **overrides)


def save_json_config(path, cfg) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)


def load_json_config(path, cls):
    with open(path) as fh:
        return cls(**json.load(fh))
