import pytest

from robust_hedge.config import SCHEMA_VERSION, load_config, load_json_file, validate_config
from robust_hedge.errors import ConfigError
from robust_hedge.utils import save_file, write_json


def _simulated(**extra):
    data = {
        "schema_version": SCHEMA_VERSION,
        "model": {"name": "constant", "epsilon": 0.1},
        "simulation": {"alpha": [0.5]},
    }
    data.update(extra)
    return data


def test_defaults():
    cfg = validate_config(_simulated())
    assert cfg.n_steps == 1000
    assert cfg.replicates == 2000
    assert cfg.level == 0.05
    assert cfg.truncation == "auto"
    assert cfg.seed == 0
    assert cfg.r == 1.0
    assert cfg.data is None
    assert cfg.prices_file is None
    assert "out" not in validate_config(_simulated(out="somewhere")).to_dict()


def test_missing_fields_are_listed():
    with pytest.raises(ConfigError) as e:
        validate_config({})
    for name in ("schema_version", "model", "data or simulation"):
        assert name in str(e.value)
    with pytest.raises(ConfigError):
        validate_config([])


def test_bad_values():
    with pytest.raises(ConfigError):
        validate_config(_simulated(schema_version=2))
    with pytest.raises(ConfigError):
        validate_config(_simulated(level=1.5))
    with pytest.raises(ConfigError):
        validate_config(_simulated(n_steps=0))
    with pytest.raises(ConfigError):
        validate_config(_simulated(replicates=2.5))
    with pytest.raises(ConfigError):
        validate_config(_simulated(truncation=-1.0))
    with pytest.raises(ConfigError):
        validate_config(_simulated(r=-0.1))
    with pytest.raises(ConfigError):
        validate_config(_simulated(seed=-1))
    with pytest.raises(ConfigError):
        validate_config(_simulated(simulation={"alpha": [0.5, 1.0]}))
    with pytest.raises(ConfigError):
        validate_config(_simulated(simulation={}))


def test_simulation_needs_markov_drift():
    with pytest.raises(ConfigError):
        validate_config(
            _simulated(model={"name": "running-mean", "epsilon": 0.1}, simulation={"alpha": [1.0, 0.5]})
        )


def test_data_or_simulation(tmp_path):
    prices = tmp_path / "prices.csv"
    save_file(str(prices), "s,x\n0.0,1.0\n1.0,1.1\n")
    data = _simulated()
    del data["simulation"]
    data["data"] = {"prices": "prices.csv"}
    cfg = validate_config(data, str(tmp_path))
    assert cfg.prices_file == str(prices)
    data["simulation"] = {"alpha": [0.5]}
    with pytest.raises(ConfigError):
        validate_config(data, str(tmp_path))
    del data["simulation"]
    data["data"] = {"prices": "missing.csv"}
    with pytest.raises(ConfigError):
        validate_config(data, str(tmp_path))


def test_unknown_fields_warn(capsys):
    validate_config(_simulated(colour="blue"))
    assert "Ignoring unknown config field 'colour'" in capsys.readouterr().err


def test_load_config(tmp_path):
    fname = tmp_path / "config.json"
    write_json(str(fname), _simulated(n_steps=50))
    assert load_config(str(fname)).n_steps == 50
    save_file(str(tmp_path / "broken.json"), "{not json")
    with pytest.raises(ConfigError):
        load_json_file(str(tmp_path / "broken.json"))
    with pytest.raises(ConfigError):
        load_json_file(str(tmp_path / "absent.json"))
