"""Unified experiment configuration (YAML or JSON; unknown keys rejected)."""
from __future__ import annotations

import json
import os
from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .baselines.n2v import N2vConfig
from .baselines.tv import TvConfig
from .errors import ConfigError
from .network import NetworkConfig
from .objective import LossConfig
from .simulator import SimulationRecipe
from .trainer import TrainConfig

OUTPUT_ROOT_ENV = "PSL_OUTPUT_ROOT"
METHODS = ("identity", "psl", "tv", "n2v")


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    methods: tuple[str, ...] = ("identity", "psl", "tv", "n2v")
    split: str = "val"
    peak: float = Field(2000.0, gt=0)

    def model_post_init(self, __context):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    output_dir: str = "runs/desk"
    data_dir: str | None = None  # default: <output_dir>/data
    rois: str | None = None  # default: <data_dir>/rois.txt
    simulation: SimulationRecipe = SimulationRecipe()
    network: NetworkConfig = NetworkConfig()
    loss: LossConfig = LossConfig()
    train: TrainConfig = TrainConfig()
    tv: TvConfig = TvConfig()
    n2v: N2vConfig = N2vConfig()
    evaluate: EvalConfig = EvalConfig()

    def out_path(self) -> Path:
        path = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not path.is_absolute():
            path = Path(root) / path
        return path

    def data_path(self) -> Path:
        if self.data_dir is None:
            return self.out_path() / "data"
        path = Path(self.data_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not path.is_absolute():
            path = Path(root) / path
        return path

    def rois_path(self) -> Path:
        return Path(self.rois) if self.rois else self.data_path() / "rois.txt"

    def resolved(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def _set_dotted(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a section")
    node[keys[-1]] = value


def parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(path=None, overrides: list[str] | tuple = ()) -> ExperimentConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        _set_dotted(doc, *parse_override(item))
    try:
        return ExperimentConfig(**doc)
    except (ValidationError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def write_resolved(cfg: ExperimentConfig, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "resolved_config.json"
    path.write_text(json.dumps(cfg.resolved(), sort_keys=True, indent=2) + "\n")
    return path
