import json

import pytest

from remidi.config import ConfigError, load_config, parse_config


def test_defaults_fill_in():
    cfg = parse_config({"experiment": "paired-tabular"})
    assert cfg.plr.replay_rate == 0.8 and cfg.agent.discount == 0.95
    assert cfg.solver.tolerance == 1e-6


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"plr": {"replay_rate": 1.5}}, "plr.replay_rate"),
        ({"plr": {"staleness_coeff": -0.1}}, "plr.staleness_coeff"),
        ({"plr": {"capacity": -1}}, "plr.capacity"),
        ({"agent": {"discount": 0.0}}, "agent.discount"),
        ({"train": {"iterations": 0}}, "train.iterations"),
        ({"plr": {"bogus": 1}}, "plr.bogus"),
    ],
)
def test_invalid_values_name_the_field(patch, field):
    with pytest.raises(ConfigError) as err:
        parse_config({"experiment": "plr", "env": {"family": "lever"}, **patch})
    assert field in str(err.value)


def test_unknown_experiment_rejected():
    with pytest.raises(ConfigError, match="experiment"):
        parse_config({"experiment": "nope"})


def test_family_mismatch_rejected():
    with pytest.raises(ConfigError):
        parse_config({"experiment": "plr", "env": {"family": "lottery"}})


def test_digest_is_canonical():
    a = parse_config({"experiment": "exact-blp", "solver": {"tolerance": 1e-6}})
    b = parse_config({"solver": {"tolerance": 1e-6}, "experiment": "exact-blp"})
    assert a.digest() == b.digest()
    assert a.digest() != parse_config({"experiment": "exact-blp", "solver": {"tolerance": 1e-7}}).digest()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.json"))
    assert files
    for f in files:
        load_config(f)
        json.loads(f.read_text())
