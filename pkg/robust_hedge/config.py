import json
import os
from collections import OrderedDict

from robust_hedge import log
from robust_hedge.errors import ConfigError
from robust_hedge.models import MarkovDriftModel, as_alpha, model_from_json
from robust_hedge.seeds import as_seed
from robust_hedge.utils import parse_json, read_file

SCHEMA_VERSION = 1

DEFAULTS = OrderedDict(
    [
        ("n_steps", 1000),
        ("replicates", 2000),
        ("level", 0.05),
        ("threads", 1),
        ("truncation", "auto"),
        ("window", None),
        ("floor", None),
        ("seed", 0),
        ("r", 1.0),
        ("band_width", None),
        ("hedge_steps", 100),
        ("out", None),
        ("hedge", None),
        ("vol_map", None),
    ]
)

REQUIRED = ("schema_version", "model")
KNOWN = set(DEFAULTS) | set(REQUIRED) | {"data", "simulation"}


def load_json_file(path, what="JSON"):
    text = read_file(path)
    if text is None:
        raise ConfigError("{} file '{}' does not exist".format(what, path))
    try:
        return parse_json(text)
    except json.JSONDecodeError as e:
        raise ConfigError("Could not parse {} file '{}': {}".format(what, path, e))


class PipelineConfig:
    def __init__(self, data, base_dir="."):
        self.raw = data
        self.base_dir = base_dir
        for key, value in data.items():
            setattr(self, key, value)

    def path(self, name):
        return os.path.join(self.base_dir, os.path.expanduser(name))

    @property
    def prices_file(self):
        if self.data is None:
            return None
        return self.path(self.data["prices"])

    def to_dict(self):
        return OrderedDict((k, v) for k, v in self.raw.items() if k != "out")


def _check_simulation(sim, model):
    if not isinstance(sim, dict) or "alpha" not in sim:
        raise ConfigError("simulation needs the true parameter 'alpha'")
    if not isinstance(model, MarkovDriftModel):
        raise ConfigError(
            "Simulated volatility needs a Markov drift model, '{}' depends on the path".format(
                model.name
            )
        )
    as_alpha(sim["alpha"], model.m)


def validate_config(data, base_dir="."):
    """Fill defaults and check a parsed pipeline config"""
    if not isinstance(data, dict):
        raise ConfigError("Config must be a JSON object")
    missing = [key for key in REQUIRED if key not in data]
    if "data" not in data and "simulation" not in data:
        missing.append("data or simulation")
    if missing:
        raise ConfigError("Config is missing required fields: {}".format(", ".join(missing)))
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            "Unsupported schema_version {} (expected {})".format(data["schema_version"], SCHEMA_VERSION)
        )
    if "data" in data and "simulation" in data:
        raise ConfigError("Config may have either 'data' or 'simulation', not both")
    for key in data:
        if key not in KNOWN:
            log.warning("Ignoring unknown config field '{}'".format(key))

    cfg = OrderedDict(data)
    for key, value in DEFAULTS.items():
        cfg.setdefault(key, value)
    cfg.setdefault("data", None)
    cfg.setdefault("simulation", None)

    model = model_from_json(cfg["model"])
    if cfg["simulation"] is not None:
        _check_simulation(cfg["simulation"], model)
    else:
        if not isinstance(cfg["data"], dict) or "prices" not in cfg["data"]:
            raise ConfigError("data needs a 'prices' CSV path")
        fname = os.path.join(base_dir, os.path.expanduser(cfg["data"]["prices"]))
        if not os.path.isfile(fname):
            raise ConfigError("Price file '{}' does not exist".format(fname))
    if not 0.0 < cfg["level"] < 1.0:
        raise ConfigError("level must be in (0, 1), got {}".format(cfg["level"]))
    if cfg["truncation"] != "auto":
        if not isinstance(cfg["truncation"], (int, float)) or cfg["truncation"] <= 0:
            raise ConfigError("truncation must be a positive number or 'auto'")
    elif model.m != 1:
        log.info("truncation 'auto' with m={} searches c by minimax risk".format(model.m))
    for key in ("n_steps", "replicates", "threads", "hedge_steps"):
        if not isinstance(cfg[key], int) or cfg[key] < 1:
            raise ConfigError("{} must be a positive integer, got {}".format(key, cfg[key]))
    if cfg["r"] < 0:
        raise ConfigError("r must be >= 0, got {}".format(cfg["r"]))
    as_seed(cfg["seed"])
    return PipelineConfig(cfg, base_dir)


def load_config(path):
    return validate_config(load_json_file(path, "config"), os.path.dirname(os.path.abspath(path)))
