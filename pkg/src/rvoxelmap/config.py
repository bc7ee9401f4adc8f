"""Flat key = value run configuration.

One key per line, `#` for comments; keys cover the map, the estimator, the
synthetic scene, and run paths. Unknown keys are rejected so typos fail
loudly, and save/load round-trips exactly.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .odometry import OdometryConfig
from .voxel_map import MapConfig


@dataclass
class RunConfig:
    map: MapConfig = field(default_factory=MapConfig)
    odometry: OdometryConfig = field(default_factory=OdometryConfig)
    dataset_dir: str = ""
    output_dir: str = "out"
    groundtruth: str = ""
    max_scans: int = 0          # 0 = no limit
    seed: int = 42
    # synthetic scene parameters for the `synth` subcommand
    scene_length: float = 20.0
    scene_width: float = 4.0
    scene_height: float = 3.0
    num_scans: int = 200
    rays: int = 2500
    outlier_ratio: float = 0.1
    noise_sigma: float = 0.01


def _sections(cfg: RunConfig):
    """(label, object) pairs whose dataclass fields form the flat key set."""
    return (("map", cfg.map), ("odometry", cfg.odometry), ("run", cfg))


_NESTED = ("map", "odometry")


def _flat_fields(cfg: RunConfig):
    """name -> (owner object, field type) over all flat keys."""
    table = {}
    for label, obj in _sections(cfg):
        for f in dataclasses.fields(obj):
            if label == "run" and f.name in _NESTED:
                continue
            if f.name in table:
                raise ConfigError(f"duplicate config key {f.name}")
            table[f.name] = (obj, f.type)
    return table


def save_config(cfg: RunConfig, path):
    """Write every knob as `key = value`, grouped by section comment."""
    with open(path, "w") as f:
        for label, obj in _sections(cfg):
            f.write(f"# {label}\n")
            for fld in dataclasses.fields(obj):
                if label == "run" and fld.name in _NESTED:
                    continue
                f.write(f"{fld.name} = {getattr(obj, fld.name)!r}\n")


def _coerce(name: str, text: str, ftype: str):
    text = text.strip()
    if ftype in ("int", int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{name}: expected integer, got {text!r}")
    if ftype in ("float", float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{name}: expected number, got {text!r}")
    # str: accept bare or repr-quoted
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def load_config(path) -> RunConfig:
    """Parse a config file into a validated RunConfig.

    Raises:
        ConfigError: unknown key, malformed line, or invalid value.
    """
    cfg = RunConfig()
    table = _flat_fields(cfg)
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{ln}: expected `key = value`, got "
                              f"{stripped!r}")
        name, _, value = stripped.partition("=")
        name = name.strip()
        if name not in table:
            raise ConfigError(f"{path}:{ln}: unknown key {name!r}")
        obj, ftype = table[name]
        setattr(obj, name, _coerce(name, value, ftype))
    # re-run the dataclass validators on the final values
    cfg.map.__post_init__()
    cfg.odometry.__post_init__()
    return cfg
