import json

import pytest

from hdabc.config import ConfigError, RunConfig, dump_config, parse_config

MINIMAL = {"model": {"id": "twisted", "params": {"p": 3}}, "seed": 1}


def _paths(err):
    return [p for p, _ in err.value.errors]


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.pipeline == ["reject"]
    assert cfg.n == 100_000
    assert cfg.kernel.kind == "uniform" and cfg.kernel.quantile == 0.01
    resolved = json.loads(dump_config(cfg))
    assert resolved["copula"]["grid_size"] == 512
    assert resolved["output"]["dir"] == "abc_out"


def test_dump_round_trip(tmp_path):
    cfg = parse_config({**MINIMAL, "pipeline": ["reject", "regression", "marginal", "copula"],
                        "selections": {"joint": [0, 2], "marginal": {"0": [0], "1": [1], "2": [2]},
                                       "pairs": {"0,1": [0, 1]}}})
    path = tmp_path / "c.json"
    path.write_text(dump_config(cfg))
    assert parse_config(path) == cfg
    assert parse_config(dump_config(cfg)) == cfg


def test_selection_out_of_range_names_field():
    with pytest.raises(ConfigError) as err:
        parse_config({**MINIMAL, "selections": {"joint": [0, 3]}})
    assert _paths(err) == ["selections.joint[1]"]


def test_marginal_and_pair_checks():
    with pytest.raises(ConfigError) as err:
        parse_config({**MINIMAL, "selections": {"marginal": {"5": [0]}, "pairs": {"1,1": [0, 0]}}})
    paths = _paths(err)
    assert "selections.marginal.5" in paths
    assert "selections.pairs.1,1" in paths


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config({**MINIMAL, "kernal": {}})
    assert _paths(err) == ["kernal"]
    with pytest.raises(ConfigError) as err:
        parse_config({**MINIMAL, "kernel": {"kind": "uniform", "width": 2}})
    assert _paths(err) == ["kernel.width"]


def test_seed_required_and_model_registered():
    with pytest.raises(ConfigError) as err:
        parse_config({"model": {"id": "twisted"}})
    assert _paths(err) == ["seed"]
    with pytest.raises(ConfigError) as err:
        parse_config({"model": {"id": "nope"}, "seed": 0})
    assert _paths(err) == ["model.id"]


def test_pipeline_validation():
    for bad in ([], ["reject", "reject"], ["regression"], ["bogus"]):
        with pytest.raises(ConfigError):
            parse_config({**MINIMAL, "pipeline": bad})
    assert parse_config({**MINIMAL, "pipeline": ["copula"]}).pipeline == ["copula"]


def test_bad_model_params():
    with pytest.raises(ConfigError) as err:
        parse_config({"model": {"id": "twisted", "params": {"p": 1}}, "seed": 0})
    assert _paths(err) == ["model.params"]
    with pytest.raises(ConfigError) as err:
        parse_config({"model": {"id": "gk", "params": {"bogus": 1}}, "seed": 0})
    assert _paths(err) == ["model.params"]


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_config_is_frozen():
    cfg = parse_config(MINIMAL)
    with pytest.raises(Exception):
        cfg.n = 5
    assert isinstance(cfg, RunConfig)
