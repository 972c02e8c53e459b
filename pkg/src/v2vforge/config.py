"""Layered run configuration: built-in defaults < INI file < command-line flags."""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .captions import SliceParams
from .model.config import ModelConfig
from .toy import ToySpec
from .train import GuidanceConfig, TrainConfig


class ConfigError(ValueError):
    pass


def _fields(cls, skip=()):
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        else:
            out[f.name] = f.default_factory()
    return out


SCHEMA = {
    "run": {"seed": 0, "out": "v2vforge-out", "log_level": "INFO", "jobs": 1},
    "model": _fields(ModelConfig, skip=("vocab",)),
    "train": _fields(TrainConfig),
    "guidance": _fields(GuidanceConfig),
    "toy": _fields(ToySpec),
    "slice": _fields(SliceParams),
    "transition": {"window": 8},
    "eval": {"tau": 0.1, "heldout_count": 32},
}
# values whose default is None but which are floats when set
_OPTIONAL_FLOAT = {("slice", "max_duration_s")}


def _coerce(section: str, key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if (section, key) in _OPTIONAL_FLOAT:
            return None if text.lower() in ("", "none") else float(text)
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and all(isinstance(v, int) for v in default):
                return tuple(int(s) for s in items)
            return tuple(items)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc
    return text


@dataclasses.dataclass
class RunConfig:
    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    @property
    def out(self) -> Path:
        return Path(self.values["run"]["out"])

    def model(self) -> ModelConfig:
        return _build(ModelConfig, self.values["model"])

    def train(self) -> TrainConfig:
        return _build(TrainConfig, self.values["train"])

    def guidance(self) -> GuidanceConfig:
        return _build(GuidanceConfig, self.values["guidance"])

    def toy(self) -> ToySpec:
        return _build(ToySpec, self.values["toy"])

    def slice_params(self) -> SliceParams:
        return _build(SliceParams, self.values["slice"])

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, vals in self.values.items():
            parser[section] = {k: _render(v) for k, v in vals.items()}
        from io import StringIO

        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini(), encoding="utf-8")
        return path


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _build(cls, values):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """``overrides`` maps ``"section.key"`` to a value (flags); unknown keys raise :class:`ConfigError`."""
    values = {s: dict(v) for s, v in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            read = parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not read:
            raise ConfigError(f"config file {path} not found")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser[section].items():
                _set(values, section, key, raw)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        _set(values, section, key, value)
    return RunConfig(values)


def _set(values, section, key, raw):
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    values[section][key] = _coerce(section, key, raw, SCHEMA[section][key])
