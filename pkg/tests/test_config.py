import json

import pytest

from dsheet.config import ConfigError, RunConfig, config_from_dict, load_config, override


def test_defaults():
    cfg = RunConfig()
    assert cfg.delta == 0.5 and cfg.h_list == (0.2, 0.1, 0.05, 0.025)
    assert cfg.mesh.n_radial == 256 and cfg.mesh.r_inner_factor == 16.0
    assert [p.h for p in cfg.params()] == list(cfg.h_list)


def test_json_round_trip(tmp_path):
    cfg = override(RunConfig(), delta=0.4, h_list=[0.1, 0.05], n_radial=64, seed=3)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert load_config(path) == cfg


def test_nested_values():
    cfg = config_from_dict(
        {"delta": 0.3, "mesh": {"n_angular": 64}, "optimizer": {"max_iter": 5}, "diagnostics": {"radii": [0.4]}}
    )
    assert cfg.mesh.n_angular == 64 and cfg.mesh.n_radial == 256
    assert cfg.optimizer.max_iter == 5
    assert cfg.diagnostics.radii == (0.4,)


@pytest.mark.parametrize(
    "data",
    [
        {"bogus": 1},
        {"mesh": {"n_radial": 8}},
        {"mesh": {"n_angular": 33}},
        {"mesh": {"size": 3}},
        {"delta": "half"},
        {"delta": 1.2},
        {"h_list": []},
        {"h_list": [0.1, 0.1]},
        {"h_list": [0.3]},
        {"h_list": "0.1"},
        {"optimizer": {"max_iter": 2.5}},
        {"optimizer": {"precondition": 1}},
        {"diagnostics": {"rho": 1.0}},
        {"diagnostics": {"radii": [0.0]}},
        {"seed": True},
        [],
    ],
)
def test_rejects_bad_config(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


def test_override_ignores_none():
    cfg = RunConfig()
    assert override(cfg, delta=None, h_list=None) == cfg
    with pytest.raises(ConfigError):
        override(cfg, n_radial=4)
