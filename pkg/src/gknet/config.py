"""YAML configuration files for the CLI.

A config file holds up to three sections (``network``, ``train``,
``synthesis``) whose keys mirror the corresponding dataclasses. Unknown
sections or keys are rejected; command-line flags always override file
values.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .data import SynthesisConfig
from .errors import ConfigurationError
from .lre import TransformerConfig
from .model import NetworkConfig
from .objectives import LossConfig
from .train import TrainConfig

__all__ = ["load_config_file", "build_configs"]

_SECTIONS = ("network", "train", "synthesis")


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def load_config_file(path) -> dict:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"{path}: unknown sections {sorted(unknown)}")
    allowed = {"network": _field_names(NetworkConfig),
               "train": _field_names(TrainConfig) - {"network"},
               "synthesis": _field_names(SynthesisConfig)}
    for section, keys in allowed.items():
        body = raw.get(section) or {}
        bad = set(body) - keys
        if bad:
            raise ConfigurationError(f"{path}: unknown keys in [{section}]: {sorted(bad)}")
    return raw


def _coerce_tuples(cls, body: dict) -> dict:
    out = dict(body)
    for f in dataclasses.fields(cls):
        if f.name in out and isinstance(out[f.name], list):
            out[f.name] = tuple(out[f.name])
    return out


def build_configs(file_sections: dict | None, overrides: dict | None = None):
    """Merge file sections with flag overrides into the three config objects.

    overrides maps section name to {key: value}; None values are ignored.
    """
    sections = {s: dict((file_sections or {}).get(s) or {}) for s in _SECTIONS}
    for section, kv in (overrides or {}).items():
        for key, value in kv.items():
            if value is not None:
                sections[section][key] = value

    net_kv = dict(sections["network"])
    if isinstance(net_kv.get("transformer"), dict):
        net_kv["transformer"] = TransformerConfig(**net_kv["transformer"])
    try:
        network = NetworkConfig(**net_kv)
        train_kv = dict(sections["train"])
        if isinstance(train_kv.get("loss"), dict):
            train_kv["loss"] = LossConfig(**train_kv["loss"])
        if "resolution" not in train_kv:
            train_kv["resolution"] = network.resolution
        train = TrainConfig(network=network, **train_kv)
        synthesis = SynthesisConfig(**_coerce_tuples(SynthesisConfig,
                                                     sections["synthesis"]))
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
    return network, train, synthesis
