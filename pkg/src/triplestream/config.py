"""Strict JSON run configuration shared by the CLI subcommands."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import DatasetConfig
from .exceptions import ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .projection import TsneConfig
from .trainer import TrainConfig

SEED_ENV = "TSM_SEED"
SECTIONS = ("dataset", "model", "loss", "train", "eval", "tsne", "output_dir")
# derived from the dataset at train time
_MODEL_DERIVED = ("num_classes", "input_channels")


def _check_value(section, name, default, value):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and not isinstance(default, bool):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:  # optional fields default to None
        ok = value is None or isinstance(value, (int, float)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(f"{section}.{name}: unexpected value {value!r}")
    return tuple(value) if isinstance(value, list) else value


def _fields(cls, section, data, exclude=(), rename=None):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    rename = rename or {}
    known = {rename.get(f.name, f.name): f for f in dataclasses.fields(cls) if f.name not in exclude}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    out = {}
    for key, value in data.items():
        f = known[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        out[f.name] = _check_value(section, key, default, value)
    return out


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: dict = field(default_factory=dict)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    k: int = 5
    tsne: TsneConfig = field(default_factory=TsneConfig)
    output_dir: str | None = None

    def model_config(self, num_classes: int, input_channels) -> ModelConfig:
        return ModelConfig(num_classes=num_classes, input_channels=tuple(input_channels), **self.model)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self,
            dataset=dataclasses.replace(self.dataset, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            tsne=dataclasses.replace(self.tsne, seed=seed),
        )


def parse_run_config(data: dict) -> RunConfig:
    """Build and validate a RunConfig; every component invariant is checked here."""
    if not isinstance(data, dict):
        raise ConfigError("run configuration must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    try:
        dataset = DatasetConfig(**_fields(DatasetConfig, "dataset", data.get("dataset", {})))
        model = _fields(ModelConfig, "model", data.get("model", {}), exclude=_MODEL_DERIVED)
        loss = LossConfig(**_fields(LossConfig, "loss", data.get("loss", {}), rename={"lambda_": "lambda"}))
        eval_section = data.get("eval", {})
        if not isinstance(eval_section, dict) or set(eval_section) - {"k"}:
            raise ConfigError("section 'eval' accepts only 'k'")
        k = eval_section.get("k", 5)
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise ConfigError("eval.k must be a positive integer")
        train = TrainConfig(k=k, **_fields(TrainConfig, "train", data.get("train", {}), exclude=("k",)))
        tsne = TsneConfig(**_fields(TsneConfig, "tsne", data.get("tsne", {})))
        output_dir = data.get("output_dir")
        if output_dir is not None and not isinstance(output_dir, str):
            raise ConfigError("output_dir must be a string")
        config = RunConfig(dataset, model, loss, train, k, tsne, output_dir)
        config.model_config(dataset.num_classes, dataset.channels)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return config


def load_run_config(path=None) -> RunConfig:
    """Read a config file (defaults when ``path`` is None) and apply ``TSM_SEED``."""
    if path is None:
        config = RunConfig()
    else:
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
        config = parse_run_config(data)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            config = config.with_seed(int(env))
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return config
