"""Python access to the racerl simulator, agents and training harness."""

import json as _json

from ._racerl import (
    Agent,
    ConfigError,
    DomainError,
    Env,
    GeometryError,
    NumericError,
    Track,
    bundled_track_names,
    evaluate_bot,
    evaluate_checkpoint,
    load_track,
    max_speed,
    moving_average,
    priority,
    reward,
    version,
)
from ._racerl import default_config_json as _default_config_json
from ._racerl import train as _train

__version__ = version()


def default_config():
    """Default experiment configuration as a dict."""
    return _json.loads(_default_config_json())


def train(config, seed, run_dir):
    """Train one seed. `config` holds overrides of the default configuration."""
    return _train(_json.dumps(config), int(seed), str(run_dir))


__all__ = [
    "Agent",
    "ConfigError",
    "DomainError",
    "Env",
    "GeometryError",
    "NumericError",
    "Track",
    "bundled_track_names",
    "default_config",
    "evaluate_bot",
    "evaluate_checkpoint",
    "load_track",
    "max_speed",
    "moving_average",
    "priority",
    "reward",
    "train",
    "version",
]
