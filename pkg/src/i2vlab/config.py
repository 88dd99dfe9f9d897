"""Sectioned key=value experiment configuration.

One file drives a whole run: dataset geometry, model shape, training,
sampling, modulation and sweep grids live under named sections with a
schema version tag.  Unknown sections or keys are rejected with the
offending name so typos fail loudly instead of silently using defaults.
The resolved configuration can be exported as JSON for reproducibility.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass

from .data import SpriteDatasetConfig
from .model import ToyDiTConfig, TrainConfig
from .modulation import BranchPolicy, ModulationConfig, Schedule
from .sampler import SamplerConfig

__all__ = ["SCHEMA_VERSION", "ConfigError", "ExperimentConfig", "load_config", "save_config", "resolved_json"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Unparseable, unknown or inconsistent configuration input."""


@dataclass(frozen=True)
class ModelShape:
    """Network size knobs; geometry comes from the dataset section."""

    layers: int = 4
    heads: int = 4
    head_dim: int = 8
    mlp_ratio: int = 4


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    dataset: SpriteDatasetConfig = SpriteDatasetConfig()
    model: ModelShape = ModelShape()
    train: TrainConfig = TrainConfig()
    sampler: SamplerConfig = SamplerConfig()
    modulation: ModulationConfig = ModulationConfig()
    sweep_gammas: tuple[float, ...] = (-2.0, -1.0, 0.0, 0.6, 1.0)
    sweep_seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {self.schema_version} unsupported, expected {SCHEMA_VERSION}"
            )
        if not self.sweep_gammas or not self.sweep_seeds:
            raise ConfigError("sweep_gammas and sweep_seeds must be nonempty")

    def model_config(self, with_reference: bool = True) -> ToyDiTConfig:
        """Concrete network config; the reference-conditioned variant
        doubles the input channels for the concatenated reference."""
        out_ch = self.dataset.content_channels
        return ToyDiTConfig(
            frames=self.dataset.frames,
            height=self.dataset.height,
            width=self.dataset.width,
            in_channels=2 * out_ch if with_reference else out_ch,
            out_channels=out_ch,
            layers=self.model.layers,
            heads=self.model.heads,
            head_dim=self.model.head_dim,
            mlp_ratio=self.model.mlp_ratio,
            num_classes=2,
        )


_SECTIONS = {
    "run": None,
    "dataset": SpriteDatasetConfig,
    "model": ModelShape,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "modulation": ModulationConfig,
    "sweep": None,
}


def _parse_value(raw: str, kind, where: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from exc


def _section_kwargs(parser: configparser.ConfigParser, section: str, cls) -> dict:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in parser.items(section):
        if key not in fields:
            raise ConfigError(f"unknown key [{section}] {key}")
        default = getattr(cls(), key)
        where = f"[{section}] {key}"
        if isinstance(default, bool):
            kwargs[key] = _parse_value(raw, bool, where)
        elif isinstance(default, int):
            kwargs[key] = _parse_value(raw, int, where)
        elif isinstance(default, float):
            kwargs[key] = _parse_value(raw, float, where)
        elif isinstance(default, (Schedule, BranchPolicy)):
            try:
                kwargs[key] = type(default)(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}") from exc
        else:
            kwargs[key] = raw.strip()
    return kwargs


def _float_list(raw: str, where: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    return tuple(_parse_value(p, float, where) for p in parts)


def _int_list(raw: str, where: str) -> tuple[int, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    return tuple(_parse_value(p, int, where) for p in parts)


def load_config(path: str) -> ExperimentConfig:
    """Parse an experiment file over the built-in defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    kwargs: dict = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        cls = _SECTIONS[section]
        if cls is not None:
            try:
                kwargs[section] = cls(**_section_kwargs(parser, section, cls))
            except ValueError as exc:
                raise ConfigError(f"[{section}]: {exc}") from exc
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key != "schema_version":
                raise ConfigError(f"unknown key [run] {key}")
            kwargs["schema_version"] = _parse_value(raw, int, "[run] schema_version")
    if parser.has_section("sweep"):
        for key, raw in parser.items("sweep"):
            if key == "gammas":
                kwargs["sweep_gammas"] = _float_list(raw, "[sweep] gammas")
            elif key == "seeds":
                kwargs["sweep_seeds"] = _int_list(raw, "[sweep] seeds")
            else:
                raise ConfigError(f"unknown key [sweep] {key}")
    return ExperimentConfig(**kwargs)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (Schedule, BranchPolicy)):
        return value.value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_config(path: str, config: ExperimentConfig) -> None:
    """Write every field explicitly so the file round-trips losslessly."""
    lines = ["[run]", f"schema_version = {config.schema_version}", ""]
    for section, obj in (
        ("dataset", config.dataset),
        ("model", config.model),
        ("train", config.train),
        ("sampler", config.sampler),
        ("modulation", config.modulation),
    ):
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    lines.append("[sweep]")
    lines.append("gammas = " + ", ".join(repr(g) for g in config.sweep_gammas))
    lines.append("seeds = " + ", ".join(str(s) for s in config.sweep_seeds))
    lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def resolved_json(config: ExperimentConfig) -> str:
    """Fully resolved configuration as JSON (enums as their string values)."""

    def convert(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, (Schedule, BranchPolicy)):
            return obj.value
        if isinstance(obj, tuple):
            return list(obj)
        return obj

    return json.dumps(convert(config), indent=2, sort_keys=True)
