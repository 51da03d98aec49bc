"""Run configuration: model dims, loss weights, training schedule, paths.

A JSON config file populates the dataclass; CLI flags override single
fields. Everything that affects a run is in here, so config + seed fully
determine outputs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .losses import LossConfig


@dataclass
class RunConfig:
    # model shape
    d_model: int = 64
    n_heads: int = 4
    lm_layers: int = 2
    enc_blocks: int = 2
    d_sem: int = 48
    d_pix: int = 32
    patch: int = 8
    canvas: int = 64
    local_res: int = 32
    max_seq: int = 384

    # loss
    alpha: float = 1.0
    w_ce: float = 1.0
    w_dice: float = 1.0
    dice_eps: float = 1.0
    ce_eps: float = 1e-7

    # training
    stage: int = 1
    seed: int = 0
    optimizer: str = "adam"     # adam | sgd
    lr: float = 1.2e-3
    momentum: float = 0.0       # sgd only
    steps: int = 400
    batch: int = 4              # samples averaged into one update
    interleave_boost: float = 0.65  # extra draw weight on interleaved refseg

    # generation / eval
    ilvc_enabled: bool = True
    max_steps: int = 256
    threshold: float = 0.5

    # paths
    data_dir: str = "data"
    vocab_path: str = ""        # empty -> <data_dir>/vocab.txt
    checkpoint: str = "model.ckpt"
    init_checkpoint: str = ""   # warm start (stage 2 resumes from stage 1)
    out_dir: str = "out"

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.local_res % self.patch:
            raise ValueError("local_res must be divisible by patch")
        if self.canvas % self.patch:
            raise ValueError("canvas must be divisible by patch")
        if self.d_model % self.n_heads or self.d_sem % self.n_heads \
                or self.d_pix % self.n_heads:
            raise ValueError("widths must be divisible by n_heads")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if not 0.0 <= self.interleave_boost < 1.0:
            raise ValueError("interleave_boost must be in [0, 1)")

    @property
    def vocab_file(self) -> str:
        return self.vocab_path or f"{self.data_dir}/vocab.txt"

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha=self.alpha, w_ce=self.w_ce, w_dice=self.w_dice,
                          dice_eps=self.dice_eps, ce_eps=self.ce_eps)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def load(cls, path: str | None = None, overrides: dict | None = None) -> "RunConfig":
        fields = {}
        if path:
            with open(path, encoding="utf-8") as f:
                loaded = json.load(f)
            known = {f.name for f in dataclasses.fields(cls)}
            unknown = set(loaded) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            fields.update(loaded)
        if overrides:
            fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
