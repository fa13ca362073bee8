"""Training loop, evaluation metrics and the ablation runner."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import autodiff as ad
from .config import CLASS_NAMES, VARIANT_LABELS, VARIANTS, RunConfig
from .data import (Checkpoint, FeatureBundle, collate, load_checkpoint, load_lexicons, load_manifest, load_split,
                   save_checkpoint)
from .errors import ContractError, DivergenceError, ValidationError
from .esem import LexiconSet
from .model import ForwardOutput, GroupEmotionModel
from .nn import Adam
from .vsim import SimStats

log = logging.getLogger(__name__)

SUM_IDENTITY_TOL = 1e-6


@dataclass
class Metrics:
    confusion: np.ndarray
    losses: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def overall(self) -> float:
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def per_class(self) -> list[float | None]:
        rows = self.confusion.sum(axis=1)
        return [float(self.confusion[c, c] / rows[c]) if rows[c] else None for c in range(3)]

    @classmethod
    def from_predictions(cls, labels: Sequence[int], predictions: Sequence[int], losses=None) -> "Metrics":
        confusion = np.zeros((3, 3), dtype=np.int64)
        np.add.at(confusion, (np.asarray(labels), np.asarray(predictions)), 1)
        return cls(confusion, dict(losses or {}))

    def to_dict(self) -> dict[str, Any]:
        return {
            "confusion": self.confusion.tolist(),
            "per_class": dict(zip(CLASS_NAMES, self.per_class)),
            "overall": self.overall,
            "n": self.total,
            "losses": self.losses,
        }


@dataclass
class TrainResult:
    model: GroupEmotionModel
    log: list[dict[str, Any]]
    best: dict[str, Any]
    out_dir: Path | None
    checkpoint: Checkpoint | None = None


def lexicons_for(config: RunConfig) -> LexiconSet:
    return load_lexicons(config.lexicons or None, dim=config.d_e)


def build_model(config: RunConfig, lexicons: LexiconSet | None = None) -> GroupEmotionModel:
    return GroupEmotionModel(config, lexicons or lexicons_for(config))


def _mean_report(reports: list[tuple[int, dict[str, float]]]) -> dict[str, float]:
    n = sum(w for w, _ in reports)
    return {k: sum(w * r[k] for w, r in reports) / n for k in reports[0][1]}


def _predict(out: ForwardOutput) -> np.ndarray:
    return np.argmax(out.group_logits.data, axis=1)


def evaluate(model: GroupEmotionModel, bundles: Sequence[FeatureBundle], batch_size: int | None = None,
             variant: str | None = None) -> Metrics:
    """Eval-mode predictions (no dropout, running similarity statistics) and averaged losses."""
    if not bundles:
        raise ValidationError("evaluate: empty split")
    batch_size = batch_size or model.config.batch_size
    labels, preds, reports = [], [], []
    for start in range(0, len(bundles), batch_size):
        batch = collate(bundles[start:start + batch_size], batch_size, model.dtype)
        out = model.forward(batch, train=False, variant=variant)
        _, report = model.losses(out, batch.labels, variant)
        labels.extend(batch.labels.tolist())
        preds.extend(_predict(out).tolist())
        reports.append((len(batch), report.to_dict()))
    return Metrics.from_predictions(labels, preds, _mean_report(reports))


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def make_checkpoint(model: GroupEmotionModel, opt: Adam | None, epoch: int, extra: dict | None = None,
                    params: dict[str, np.ndarray] | None = None) -> Checkpoint:
    return Checkpoint(
        config=model.config.to_dict(),
        params=params if params is not None else model.state_arrays(),
        adam_state=opt.state_dict() if opt is not None else None,
        sim_stats=model.sim_stats.to_dict(),
        epoch=epoch,
        extra=extra or {},
    )


def model_from_checkpoint(ckpt: Checkpoint, lexicons: LexiconSet | None = None) -> GroupEmotionModel:
    config = RunConfig.from_dict(ckpt.config)
    model = build_model(config, lexicons)
    model.load_arrays(ckpt.params)
    if ckpt.sim_stats:
        model.sim_stats = SimStats.from_dict(ckpt.sim_stats)
    return model


def train(config: RunConfig, train_set: Sequence[FeatureBundle] | None = None,
          val_set: Sequence[FeatureBundle] | None = None, lexicons: LexiconSet | None = None,
          resume: str | Path | Checkpoint | None = None, out_dir: str | Path | None = None,
          write: bool = True) -> TrainResult:
    """Adam on the summed objective for ``config.epochs`` epochs.

    Data come from ``config.data`` unless given.  With ``write`` the epoch log
    (``epochs.jsonl``), the final state (``last.json``) and the best-by-validation
    parameters (``best.json``) are written to ``out_dir`` (default ``config.out``).
    """
    config.validate()
    if train_set is None:
        if not config.data:
            raise ValidationError("config field 'data' is required to train")
        splits = load_manifest(config.data)
        train_set = load_split(config.data, "train", config.hidden, config.scales)
        val_set = load_split(config.data, "val", config.hidden, config.scales) if splits.get("val") else []
    if not train_set:
        raise ValidationError("training split is empty")
    val_set = list(val_set or [])
    out = Path(out_dir or config.out) if write else None

    model = build_model(config, lexicons)
    opt = Adam(model.variant_parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps_opt,
               decay=config.lr_decay, decay_mode=config.lr_decay_mode)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    history: list[dict[str, Any]] = []
    best: dict[str, Any] = {"overall": -1.0, "l_total": None, "epoch": 0}
    best_params = None
    start_epoch = 0

    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        model.load_arrays(ckpt.params)
        if ckpt.sim_stats:
            model.sim_stats = SimStats.from_dict(ckpt.sim_stats)
        opt.load_state_dict(ckpt.adam_state)
        shuffle_rng = _restore_rng(ckpt.extra["shuffle_rng"])
        dropout_rng = _restore_rng(ckpt.extra["dropout_rng"])
        history = list(ckpt.extra.get("history", []))
        best = dict(ckpt.extra.get("best", best))
        start_epoch = ckpt.epoch

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2))

    n = len(train_set)
    for epoch in range(start_epoch, config.epochs):
        opt.set_epoch(epoch)
        lr_start = opt.lr
        order = shuffle_rng.permutation(n)
        reports, correct, steps = [], 0, 0
        for start in range(0, n, config.batch_size):
            batch = collate([train_set[i] for i in order[start:start + config.batch_size]], config.batch_size,
                            model.dtype)
            out_fw = model.forward(batch, train=True, rng=dropout_rng)
            loss, report = model.losses(out_fw, batch.labels)
            parts = report.to_dict()
            if not all(math.isfinite(v) for v in parts.values()):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1} step {steps + 1}: {parts}")
            component_sum = parts["l_group"] + parts["l_s"] + parts["l_f"] + parts["l_o"] + parts["l_sam"]
            if abs(float(loss.data) - component_sum) > SUM_IDENTITY_TOL * max(1.0, abs(component_sum)):
                raise ContractError(f"objective {float(loss.data)} != sum of components {component_sum}")
            model.zero_grad()
            ad.backward(loss)
            opt.step()
            steps += 1
            correct += int(np.sum(_predict(out_fw) == batch.labels))
            reports.append((len(batch), parts))
        record: dict[str, Any] = {"epoch": epoch + 1, "lr": lr_start, "steps": steps,
                                  "losses": _mean_report(reports), "train_acc": correct / n}
        if val_set:
            metrics = evaluate(model, val_set, config.batch_size)
            record["val_acc"] = metrics.overall
            if (metrics.overall > best["overall"]
                    or (metrics.overall == best["overall"] and metrics.losses["l_total"] < best["l_total"])):
                best = {"overall": metrics.overall, "l_total": metrics.losses["l_total"], "epoch": epoch + 1}
                best_params = model.state_arrays()
        history.append(record)
        log.info("epoch %d  lr %.6g  loss %.4f  train_acc %.4f%s", record["epoch"], record["lr"],
                 record["losses"]["l_total"], record["train_acc"],
                 f"  val_acc {record['val_acc']:.4f}" if "val_acc" in record else "")
        if out is not None:
            with open(out / "epochs.jsonl", "a" if epoch > 0 else "w") as fh:
                fh.write(json.dumps(record) + "\n")

    extra = {"shuffle_rng": _rng_state(shuffle_rng), "dropout_rng": _rng_state(dropout_rng), "history": history,
             "best": best}
    if out is not None:
        save_checkpoint(make_checkpoint(model, opt, config.epochs, extra), out / "last.json")
        if best_params is not None:
            save_checkpoint(make_checkpoint(model, None, best["epoch"], {"best": best}, params=best_params),
                            out / "best.json")
    return TrainResult(model, history, best, out, make_checkpoint(model, opt, config.epochs, extra))


def evaluate_checkpoint(path: str | Path, data: str | Path, split: str = "test",
                        batch_size: int | None = None) -> Metrics:
    ckpt = load_checkpoint(path)
    model = model_from_checkpoint(ckpt)
    bundles = load_split(data, split, model.config.hidden, model.config.scales)
    return evaluate(model, bundles, batch_size)


def run_ablation(config: RunConfig, out_dir: str | Path | None = None, variants: Sequence[str] = VARIANTS,
                 write: bool = True) -> list[dict[str, Any]]:
    """Train and evaluate every variant on the same data and seed; writes ``ablation.csv``."""
    if not config.data:
        raise ValidationError("config field 'data' is required for ablation")
    splits = load_manifest(config.data)
    train_set = load_split(config.data, "train", config.hidden, config.scales)
    val_set = load_split(config.data, "val", config.hidden, config.scales) if splits.get("val") else []
    eval_split = "test" if splits.get("test") else "val"
    eval_set = load_split(config.data, eval_split, config.hidden, config.scales)
    lexicons = lexicons_for(config)
    out = Path(out_dir or config.out)
    rows = []
    for variant in variants:
        cfg = config.replace(variant=variant)
        result = train(cfg, train_set, val_set, lexicons, out_dir=out / variant, write=write)
        metrics = evaluate(result.model, eval_set, cfg.batch_size)
        pos, neu, neg = (100.0 * (a or 0.0) for a in metrics.per_class)
        rows.append({"variant": VARIANT_LABELS[variant], "pos": pos, "neu": neu, "neg": neg,
                     "overall": 100.0 * metrics.overall})
        log.info("ablation %-14s overall %.2f", VARIANT_LABELS[variant], 100.0 * metrics.overall)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        write_ablation_csv(rows, out / "ablation.csv")
    return rows


def write_ablation_csv(rows: list[dict[str, Any]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "pos", "neu", "neg", "overall"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.2f}" if isinstance(v, float) else v) for k, v in row.items()})
