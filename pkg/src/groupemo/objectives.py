"""Classification losses and the similarity alignment matching (SAM) loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError


@dataclass
class SamConfig:
    tau: float = 0.02
    epsilon: float = 1e-8
    alpha_literal: bool = False  # exp(tau * sim) instead of exp(sim / tau)
    weight_v2t: float = 1.0
    weight_t2v: float = 1.0

    def __post_init__(self):
        if self.tau <= 0 or self.epsilon < 0:
            raise ContractError("SAM temperature must be > 0 and epsilon >= 0")


@dataclass
class LossReport:
    l_group: float
    l_s: float
    l_f: float
    l_o: float
    l_sam: float
    l_total: float

    @classmethod
    def from_components(cls, l_group, l_s, l_f, l_o, l_sam) -> "LossReport":
        parts = [float(v) for v in (l_group, l_s, l_f, l_o, l_sam)]
        return cls(*parts, l_total=parts[0] + parts[1] + parts[2] + parts[3] + parts[4])

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _check_labels(labels: np.ndarray, classes: int = 3) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= classes):
        raise ContractError(f"labels must be integers in [0, {classes}), got {labels.tolist()}")
    return labels


def cross_entropy(logits: Tensor, labels, weights: np.ndarray | None = None) -> Tensor:
    """Mean of -log softmax(logits)[label]; ``weights`` (0/1 per sample) restricts the mean.

    Accepts a single logit vector with an integer label, or N x C logits with N labels.
    """
    if logits.ndim == 1:
        logits = ad.reshape(logits, (1, -1))
        labels = np.array([labels])
    labels = _check_labels(np.asarray(labels), logits.shape[-1])
    n, c = logits.shape
    if labels.shape != (n,):
        raise ContractError(f"cross_entropy: {labels.shape[0]} labels for {n} rows")
    onehot = np.eye(c)[labels]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    count = w.sum()
    if count == 0:
        # keep the graph so parameters feeding the logits get an explicit zero gradient
        return ad.scale(ad.sum(logits), 0.0)
    picked = ad.sum(logits * Tensor(onehot, dtype=logits.dtype), axis=-1)
    nll = ad.logsumexp(logits, axis=-1) - picked
    return ad.sum(nll * Tensor(w / count, dtype=logits.dtype))


def pairwise_similarity(fv: Tensor, ft: Tensor) -> Tensor:
    """N x N cosine similarities, entry (i, j) = cos(fv_i, ft_j)."""
    return ad.matmul(ad.normalize(fv), ad.transpose(ad.normalize(ft)))


def match_probabilities(sim: Tensor, cfg: SamConfig) -> Tensor:
    logits = ad.scale(sim, cfg.tau) if cfg.alpha_literal else ad.scale(sim, 1.0 / cfg.tau)
    return ad.softmax(logits, axis=-1)


def ground_truth_distribution(labels) -> np.ndarray:
    labels = _check_labels(np.asarray(labels))
    y = (labels[:, None] == labels[None, :]).astype(np.float64)
    return y / y.sum(axis=1, keepdims=True)


def _directional_kl(p: Tensor, q: np.ndarray, eps: float) -> Tensor:
    # q = 0 terms contribute nothing, whatever p is
    n = q.shape[0]
    support = q > 0
    log_q = np.where(support, np.log(np.where(support, q, 1.0)), 0.0)
    q_t = Tensor(q, dtype=p.dtype)
    log_p = ad.log(p + eps) if eps > 0 else ad.log(p + Tensor(np.where(support, 0.0, 1.0), dtype=p.dtype))
    terms = q_t * (Tensor(log_q, dtype=p.dtype) - log_p)
    return ad.scale(ad.sum(terms), 1.0 / n)


def sam_loss(fv: Tensor, ft: Tensor, labels, cfg: SamConfig | None = None) -> Tensor:
    """Symmetric KL between label-agreement targets and temperature-softmaxed similarities."""
    cfg = cfg or SamConfig()
    if fv.shape[0] < 1 or fv.shape != ft.shape:
        raise ContractError(f"sam_loss: mismatched batches {fv.shape} and {ft.shape}")
    q = ground_truth_distribution(labels)
    return sam_from_similarity(pairwise_similarity(fv, ft), q, cfg)


def sam_from_similarity(sim: Tensor, q: np.ndarray, cfg: SamConfig) -> Tensor:
    v2t = _directional_kl(match_probabilities(sim, cfg), q, cfg.epsilon)
    t2v = _directional_kl(match_probabilities(ad.transpose(sim), cfg), q, cfg.epsilon)
    return ad.scale(v2t, cfg.weight_v2t) + ad.scale(t2v, cfg.weight_t2v)


def total_loss(cue: dict[str, Tensor], group_logits: Tensor, labels, sam_value: Tensor | None = None,
               object_valid: np.ndarray | None = None) -> tuple[Tensor, LossReport]:
    """Unweighted sum of group, scene, face, object cross-entropies and SAM."""
    labels = np.asarray(labels)
    l_group = cross_entropy(group_logits, labels)
    l_s = cross_entropy(cue["scene"], labels)
    l_f = cross_entropy(cue["face"], labels)
    l_o = cross_entropy(cue["object"], labels, object_valid)
    total = l_group + l_s + l_f + l_o
    if sam_value is not None:
        total = total + sam_value
    sam = float(sam_value.data) if sam_value is not None else 0.0
    report = LossReport.from_components(l_group.data, l_s.data, l_f.data, l_o.data, sam)
    return total, report
