import json

import pytest

from vgqa.config import HierarchyConfig, TrainConfig, load_run_config, run_config_from_dict
from vgqa.errors import ConfigError


def test_defaults_validate():
    cfg = HierarchyConfig()
    cfg.validate()
    assert cfg.frames_per_clip == 4
    assert cfg.T == 16


@pytest.mark.parametrize("bad", [
    {"gamma": 0.3, "L": 16},          # gamma*L not integral
    {"d": 15},                        # odd width
    {"K": 0},
    {"sumpool_object": True, "use_object_graph": False},
    {"use_clip_graph": False},
    {"decoder_mode": "xyz"},
    {"decoder_mode": "oe", "answer_set_size": 0},
])
def test_invalid_hierarchy(bad):
    with pytest.raises(ConfigError):
        HierarchyConfig(**bad).validate()


def test_train_config_checks():
    with pytest.raises(ConfigError):
        TrainConfig(lr_stage2=1e-3, lr_stage1=1e-4).validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        run_config_from_dict({"hierarchy": {"nope": 1}})
    with pytest.raises(ConfigError):
        run_config_from_dict({"mystery_section": {}})


def test_load_with_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"hierarchy": {"d": 32}, "train": {"seed": 5}}))
    cfg = load_run_config(path, ["train.seed=9", "hierarchy.K=2", "data.out_dir=runs/x"])
    assert cfg.hierarchy.d == 32        # file beats default
    assert cfg.train.seed == 9          # override beats file
    assert cfg.hierarchy.K == 2
    assert cfg.data.out_dir == "runs/x"  # non-JSON text falls back to string


def test_bad_override_form(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{}")
    with pytest.raises(ConfigError):
        load_run_config(path, ["no_equals_sign"])
    with pytest.raises(ConfigError):
        load_run_config(path, ["toodotted.a.b=1"])


def test_missing_file():
    with pytest.raises(ConfigError):
        load_run_config("/nonexistent/cfg.json")
