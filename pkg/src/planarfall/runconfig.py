"""Run configuration: one structured text file (TOML, or JSON interchangeably)
drives training, evaluation and ablation. Unknown keys are rejected with
field-level messages, and the resolved config written next to run outputs
re-parses to an identical configuration.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .env import ConfigError, EpisodeConfig
from .ppo import PpoConfig
from .rewards import RewardWeights

OUTPUT_ROOT_ENV = "PLANARFALL_OUT"


@dataclass
class RunMeta:
    name: str = "run"
    seed: int = 1
    output_dir: str = ""
    threads: int = 0            # 0 = all available
    deterministic: bool = False
    robot: str = "builtin:reference"

    def __post_init__(self):
        if not self.output_dir:
            self.output_dir = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        if self.threads < 0:
            raise ConfigError("run.threads must be >= 0")


@dataclass
class RunConfig:
    run: RunMeta = field(default_factory=RunMeta)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def replace_value(self, dotted: str, value) -> "RunConfig":
        """Functional override of a single `section.field` entry."""
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r}: expected section.field=value")
        section, name = dotted.split(".", 1)
        if section not in ("run", "episode", "reward", "ppo"):
            raise ConfigError(f"override {dotted!r}: unknown section {section!r}")
        target = getattr(self, section)
        fmap = {f.name: f for f in fields(target)}
        if name not in fmap:
            raise ConfigError(f"override {dotted!r}: unknown field {name!r} in [{section}]")
        coerced = _coerce(section, name, fmap[name], value)
        try:
            new_section = replace(target, **{name: coerced})
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"override {dotted!r}: {exc}") from exc
        return replace(self, **{section: new_section})


_SECTIONS = {"run": RunMeta, "episode": EpisodeConfig, "reward": RewardWeights, "ppo": PpoConfig}


def _coerce(section: str, name: str, f, value):
    where = f"[{section}] {name}"
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    default = f.default if f.default is not dataclasses.MISSING else None
    if isinstance(value, str) and not isinstance(default, str) and default is not None:
        try:
            value = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where}: cannot parse {value!r}") from exc
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or (isinstance(value, float) and not float(value).is_integer()):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected an array, got {value!r}")
        if default and isinstance(default[0], int) and "int" in repr(t) + repr(default):
            return tuple(int(v) for v in value)
        return tuple(float(v) if isinstance(v, (int, float)) else v for v in value)
    # q_star and similar optional arrays
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return np.asarray(value, dtype=float)
    raise ConfigError(f"{where}: unsupported value {value!r}")


def _build_section(section: str, data: dict):
    cls = _SECTIONS[section]
    fmap = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fmap:
            raise ConfigError(f"[{section}]: unknown key {key!r}")
        kwargs[key] = _coerce(section, key, fmap[key], value)
    try:
        return cls(**kwargs)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def parse_config(doc: dict) -> RunConfig:
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    parts = {}
    for section in _SECTIONS:
        parts[section] = _build_section(section, doc.get(section, {}))
    return RunConfig(**parts)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        doc = json.loads(raw)
    else:
        try:
            doc = tomllib.loads(raw.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return parse_config(doc)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected section.field=value")
        dotted, value = item.split("=", 1)
        cfg = cfg.replace_value(dotted.strip(), value.strip())
    return cfg


# --- writing -------------------------------------------------------------------


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (tuple, list, np.ndarray)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r} to TOML")


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)


def write_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg))


def default_config() -> RunConfig:
    return RunConfig()
