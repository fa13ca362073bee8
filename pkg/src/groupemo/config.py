"""Run configuration: every architectural and optimization hyperparameter."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .errors import ValidationError

VARIANTS = ("B1", "B2_noCAM", "B2", "B3", "B4_noSAM", "B4_noSFF", "B4")

# Row labels of the published ablation table, in order.
VARIANT_LABELS = {
    "B1": "B1",
    "B2_noCAM": "B2 w/o CAM",
    "B2": "B2",
    "B3": "B3",
    "B4_noSAM": "B4 w/o $L_{SAM}$",
    "B4_noSFF": "B4 w/o SFF",
    "B4": "B4 (ours)",
}

CLASS_NAMES = ("positive", "neutral", "negative")


@dataclass
class RunConfig:
    hidden: int = 512
    heads: int = 8
    fusion_depth: int = 4
    scales: int = 4
    d_e: int = 50
    d_h: int = 0  # 0 means "same as d_e"
    ffn_mult: int = 4
    dropout: float = 0.1
    lr: float = 0.001
    lr_decay: float = 0.9
    lr_decay_mode: str = "epoch"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    batch_size: int = 4
    tau: float = 0.02
    sam_eps: float = 1e-8
    sam_alpha_literal: bool = False
    gate_mode: str = "row"
    esem_pool: str = "sum"
    sim_momentum: float = 0.9
    epochs: int = 30
    seed: int = 0
    variant: str = "B4"
    precision: str = "f32"
    data: str = ""
    lexicons: str = ""
    out: str = "runs"

    @property
    def semantic_width(self) -> int:
        return self.d_h or self.d_e

    def validate(self) -> "RunConfig":
        positive = ("hidden", "heads", "fusion_depth", "scales", "d_e", "ffn_mult", "lr", "lr_decay",
                    "batch_size", "tau", "sam_eps", "epochs", "eps_opt")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f"config field {name!r} must be positive, got {getattr(self, name)!r}")
        if self.d_h < 0:
            raise ValidationError("config field 'd_h' must be >= 0")
        if self.hidden % self.heads:
            raise ValidationError(f"config field 'heads': {self.heads} does not divide hidden={self.hidden}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"config field 'dropout' must be in [0, 1), got {self.dropout}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError("config fields 'beta1'/'beta2' must be in [0, 1)")
        if not 0.0 <= self.sim_momentum < 1.0:
            raise ValidationError("config field 'sim_momentum' must be in [0, 1)")
        choices = {"variant": VARIANTS, "precision": ("f32", "f64"), "lr_decay_mode": ("epoch", "iteration"),
                   "gate_mode": ("row", "scale"), "esem_pool": ("sum", "concat")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ValidationError(f"config field {name!r}: {getattr(self, name)!r} not in {list(allowed)}")
        return self

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ValidationError(f"unknown config field(s): {unknown}")
        values = {}
        for name, value in raw.items():
            expected = type(getattr(cls(), name))
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                raise ValidationError(f"config field {name!r}: expected {expected.__name__}, got {value!r}")
            values[name] = value
        return cls(**values).validate()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ValidationError(f"config file {path}: top level must be an object")
        return cls.from_dict(raw)
