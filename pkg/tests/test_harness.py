import json

import numpy as np
import pytest

from groupemo.config import RunConfig, VARIANT_LABELS
from groupemo.data import load_checkpoint, load_split
from groupemo.errors import ValidationError
from groupemo.harness import Metrics, evaluate, model_from_checkpoint, run_ablation, train


def test_metrics_perfect_and_constant():
    labels = [0, 1, 2, 1]
    assert np.array_equal(Metrics.from_predictions(labels, labels).confusion, np.diag([1, 2, 1]))
    constant = Metrics.from_predictions(labels, [0, 0, 0, 0]).confusion
    assert np.count_nonzero(constant.sum(axis=0)) == 1


def test_metrics_hand_count():
    m = Metrics.from_predictions([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 0, 2])
    assert m.overall == pytest.approx(4 / 6)
    assert m.per_class == [0.5, 1.0, 0.5]
    assert m.to_dict()["per_class"]["neutral"] == 1.0


def test_one_epoch_step_count(tiny_config, tiny_data):
    eight = load_split(tiny_data, "train", 8, 2)[:8]
    result = train(tiny_config.replace(epochs=1, batch_size=4), eight, [], write=False)
    assert result.log[0]["steps"] == 2


def test_same_seed_same_logs(tiny_config, tmp_path):
    a = train(tiny_config.replace(out=str(tmp_path / "a")))
    b = train(tiny_config.replace(out=str(tmp_path / "b")))
    assert (tmp_path / "a" / "epochs.jsonl").read_bytes() == (tmp_path / "b" / "epochs.jsonl").read_bytes()
    assert a.log == b.log


def test_logged_losses_sum(tiny_config):
    result = train(tiny_config, write=False)
    for record in result.log:
        parts = record["losses"]
        total = parts["l_group"] + parts["l_s"] + parts["l_f"] + parts["l_o"] + parts["l_sam"]
        assert abs(parts["l_total"] - total) <= 1e-6


def test_outputs_written(tiny_config):
    train(tiny_config)
    out = tiny_config.out
    lines = open(f"{out}/epochs.jsonl").read().splitlines()
    assert [json.loads(x)["epoch"] for x in lines] == [1, 2]
    best = load_checkpoint(f"{out}/best.json")
    model = model_from_checkpoint(best)
    assert evaluate(model, load_split(tiny_config.data, "val", 8, 2)).total == 6


def test_resume_matches_uninterrupted(tiny_config, tmp_path):
    full = train(tiny_config.replace(epochs=3, out=str(tmp_path / "full")))
    train(tiny_config.replace(epochs=2, out=str(tmp_path / "part")))
    resumed = train(tiny_config.replace(epochs=3, out=str(tmp_path / "resumed")), resume=tmp_path / "part" / "last.json")
    assert resumed.log == full.log
    a, b = full.model.state_arrays(), resumed.model.state_arrays()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_train_requires_data():
    with pytest.raises(ValidationError):
        train(RunConfig(hidden=8, heads=2), write=False)


def test_ablation_rows(tiny_config, tmp_path):
    rows = run_ablation(tiny_config.replace(epochs=1), out_dir=tmp_path / "abl")
    assert [r["variant"] for r in rows] == list(VARIANT_LABELS.values())
    text = (tmp_path / "abl" / "ablation.csv").read_text().splitlines()
    assert text[0] == "variant,pos,neu,neg,overall"
    assert len(text) == 8
