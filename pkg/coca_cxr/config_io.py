"""
Config Files
------------
JSON (de)serialization for the dataclass configs. Keys are exactly the field
names; unknown keys are rejected.
"""

import dataclasses
import json
import os

from coca_cxr.errors import ConfigurationError


def config_from_dict(cls, data):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{cls.__name__} config must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigurationError(f"bad {cls.__name__} config: {e}") from e


def config_to_dict(config):
    return {f.name: getattr(config, f.name) for f in dataclasses.fields(config) if f.init}


def load_config(cls, path):
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(cls, data)


def save_config(config, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        json.dump(config_to_dict(config), f, indent=2)
        f.write("\n")
