"""Visual-semantic interaction: similarity-gated fusion and the group encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import EncoderStack, Linear, Module

STD_EPS = 1e-8


@dataclass
class SimStats:
    """Running mean/std of the visual-semantic cosine similarity, updated in train mode only."""

    mean: float = 0.0
    std: float = 1.0
    momentum: float = 0.9
    count: int = 0

    def update(self, batch_mean: float, batch_std: float) -> None:
        std = batch_std if batch_std > 0 else self.std
        if self.count == 0:
            self.mean, self.std = batch_mean, std
        else:
            self.mean = self.momentum * self.mean + (1.0 - self.momentum) * batch_mean
            self.std = self.momentum * self.std + (1.0 - self.momentum) * std
        self.count += 1

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "momentum": self.momentum, "count": self.count}

    @classmethod
    def from_dict(cls, raw: dict) -> "SimStats":
        return cls(float(raw["mean"]), float(raw["std"]), float(raw["momentum"]), int(raw["count"]))


class InteractionModule(Module):
    def __init__(self, rng: np.random.Generator, hidden: int, heads: int, depth: int = 4, ffn_mult: int = 4,
                 dropout: float = 0.1, classes: int = 3, dtype=None):
        self.visual_proj = Linear(rng, hidden, hidden, dtype=dtype)
        self.group_encoder = EncoderStack(rng, depth, hidden, heads, ffn_mult, dropout, dtype)
        self.group_head = Linear(rng, hidden, classes, dtype=dtype)


def standardize(sim: Tensor, stats: SimStats, train: bool, update_stats: bool = True) -> Tensor:
    """Batch z-scores in train mode (N >= 2), running statistics otherwise.

    A batch whose similarities are all equal standardizes to 0.
    """
    n = sim.shape[0]
    if train and n >= 2:
        values = np.asarray(sim.data, dtype=np.float64)
        if np.ptp(values) == 0:
            if update_stats:
                stats.update(float(values.mean()), 0.0)
            return Tensor(np.zeros(n), dtype=sim.dtype)
        centered = sim - ad.mean(sim)
        std = ad.sqrt(ad.mean(centered * centered))
        if update_stats:
            stats.update(float(values.mean()), float(values.std()))
        return centered / (std + STD_EPS)
    if stats.count == 0:
        return Tensor(np.zeros(n), dtype=sim.dtype)
    return ad.scale(sim - stats.mean, 1.0 / (stats.std + STD_EPS))


def similarity_fuse(f_v: Tensor, f_t: Tensor, stats: SimStats, train: bool, gated: bool = True,
                    update_stats: bool = True) -> tuple[Tensor, Tensor | None, Tensor | None]:
    """Gate the [visual; semantic] token pair by sigmoid of the standardized cosine similarity.

    ``f_v`` is N x h (projected), ``f_t`` is h or N x h (projected).  Returns
    (tokens N x 2 x h, sim, gate); with ``gated=False`` the tokens are the plain pair.
    """
    n, h = f_v.shape
    if f_t.ndim == 1:
        f_t = ad.broadcast_to(ad.reshape(f_t, (1, h)), (n, h))
    tokens = ad.concat([ad.reshape(f_v, (n, 1, h)), ad.reshape(f_t, (n, 1, h))], axis=1)
    if not gated:
        return tokens, None, None
    sim = ad.cosine_similarity(f_v, f_t)
    gate = ad.sigmoid(standardize(sim, stats, train, update_stats))
    return tokens * ad.reshape(gate, (n, 1, 1)), sim, gate


def group_encode(tokens: Tensor, module: InteractionModule, train: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """Encoder stack over the token pair, mean over tokens -> (F_group N x h, logits N x 3)."""
    f_group = ad.mean_rows(module.group_encoder(tokens, None, train, rng))
    return f_group, module.group_head(f_group)
