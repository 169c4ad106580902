"""Experiment configuration: one JSON document, strict keys, documented defaults."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .dataset import GeneratorConfig
from .model import Architecture, ConvBlock, TcnConfig
from .training import EnsembleConfig, SwagConfig, TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class DataConfig(GeneratorConfig):
    csv: Optional[str] = None


@dataclass
class SplitConfig:
    mode: str = "WD"
    folds: int = 5
    seed: int = 0
    fold: int = 0
    manifest: Optional[str] = None


@dataclass
class EvalConfig:
    draws: int = 30
    train_hand: str = "right"
    eval_hand: str = "both"
    split: str = "test"
    seed: int = 0
    bins: int = 10
    swag_scale: float = 1.0


@dataclass
class ReportConfig:
    out_dir: str = "runs/default"


def desk_train() -> TrainConfig:
    return TrainConfig(epochs_max=40, early_stop_patience=10)


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    arch: Architecture = field(default_factory=Architecture.desk)
    train: TrainConfig = field(default_factory=desk_train)
    swag: SwagConfig = field(default_factory=SwagConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def validate(self) -> None:
        try:
            self.data.validate()
            self.arch.validate()
            self.train.validate()
            self.swag.validate()
            self.ensemble.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.split.mode.upper() not in ("WD", "WI"):
            raise ConfigError(f"split.mode must be WD or WI, got {self.split.mode!r}")
        if not 0 <= self.split.fold < self.split.folds:
            raise ConfigError("split.fold must be in [0, split.folds)")
        if self.eval.train_hand not in ("right", "both"):
            raise ConfigError("eval.train_hand must be 'right' or 'both'")
        if self.eval.eval_hand not in ("right", "left", "both"):
            raise ConfigError("eval.eval_hand must be 'right', 'left' or 'both'")
        if self.eval.split not in ("train", "test"):
            raise ConfigError("eval.split must be 'train' or 'test'")
        if self.eval.draws < 1 or self.eval.bins < 1:
            raise ConfigError("eval.draws and eval.bins must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def paper_preset() -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.arch = Architecture.paper(cfg.arch.class_count)
    cfg.train = TrainConfig()
    return cfg


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")
    kwargs = {}
    for key, value in doc.items():
        if cls is Architecture and key == "conv_blocks":
            value = [_build(ConvBlock, b, f"{where}.conv_blocks[{i}]") for i, b in enumerate(value)]
        elif cls is Architecture and key == "tcn":
            value = _build(TcnConfig, value, f"{where}.tcn")
        elif cls is DataConfig and key == "confusable_pairs":
            value = [tuple(p) for p in value]
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_SECTIONS = {
    "data": DataConfig,
    "split": SplitConfig,
    "arch": Architecture,
    "train": TrainConfig,
    "swag": SwagConfig,
    "ensemble": EnsembleConfig,
    "eval": EvalConfig,
    "report": ReportConfig,
}


def merge(base: ExperimentConfig, doc: dict) -> ExperimentConfig:
    """Overlay a (partial) config document onto ``base``; unknown keys are errors."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {unknown}")
    full = base.to_dict()
    for section, values in doc.items():
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be an object")
        full[section].update(values)
    out = {}
    for section, cls in _SECTIONS.items():
        out[section] = _build(cls, full[section], section)
    return ExperimentConfig(**out)


def parse_override(text: str) -> dict:
    """``section.key=value`` (value parsed as JSON, else taken as a string)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    parts = path.split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {path!r} must be section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return {parts[0]: {parts[1]: value}}


def load_config(path=None, overrides=(), preset: str = "desk") -> ExperimentConfig:
    if preset == "desk":
        cfg = ExperimentConfig()
    elif preset == "paper":
        cfg = paper_preset()
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        cfg = merge(cfg, doc)
    for o in overrides:
        cfg = merge(cfg, parse_override(o))
    cfg.validate()
    return cfg
