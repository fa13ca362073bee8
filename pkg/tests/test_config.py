import json

import pytest

from groupemo.config import RunConfig
from groupemo.errors import ValidationError


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert (cfg.hidden, cfg.heads, cfg.tau, cfg.batch_size, cfg.epochs) == (512, 8, 0.02, 4, 30)
    assert cfg.semantic_width == cfg.d_e


def test_dict_round_trip():
    cfg = RunConfig(hidden=16, heads=4, variant="B2")
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("field,value", [("hidden", 0), ("heads", 3), ("dropout", 1.0), ("variant", "B5"),
                                         ("precision", "f16"), ("tau", -1.0)])
def test_invalid_field_is_named(field, value):
    with pytest.raises(ValidationError, match=field):
        RunConfig(**{field: value}).validate()


def test_unknown_and_mistyped_fields(tmp_path):
    with pytest.raises(ValidationError, match="hiden"):
        RunConfig.from_dict({"hiden": 3})
    with pytest.raises(ValidationError, match="epochs"):
        RunConfig.from_dict({"epochs": "ten"})
    (tmp_path / "c.json").write_text(json.dumps({"lr": 1}))
    assert RunConfig.load(tmp_path / "c.json").lr == 1.0
