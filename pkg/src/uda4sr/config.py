"""Run configuration: INI parsing, validation, and semantic hashing."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .gan import AugmentConfig
from .gcl import ContrastConfig
from .gig import GraphConfig
from .interest import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "graph": GraphConfig,
    "gan": AugmentConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "contrast": ContrastConfig,
}


@dataclass
class RunConfig:
    graph: GraphConfig
    gan: AugmentConfig
    model: ModelConfig
    train: TrainConfig
    contrast: ContrastConfig
    data: Path | None = None
    workdir: Path | None = None

    @property
    def seed(self) -> int:
        """The single global seed; every named rng stream derives from it."""
        return self.train.seed

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls(GraphConfig(), AugmentConfig(), ModelConfig(), TrainConfig(), ContrastConfig())


def _coerce(raw: str, target_type):
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a bool: {raw!r}")
    return target_type(raw)


def load_config(path: str | Path) -> RunConfig:
    """Parse `key = value` sections [graph] [gan] [model] [train] [contrast] [paths].

    Unknown sections or keys are rejected; values are coerced to the field types.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    sections: dict[str, object] = {}
    data = workdir = None
    for section in parser.sections():
        if section == "paths":
            for key, value in parser.items(section):
                if key == "data":
                    data = Path(value)
                elif key == "workdir":
                    workdir = Path(value)
                else:
                    raise ConfigError(f"unknown key [paths] {key}")
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        cfg_type = SECTIONS[section]
        fields = {f.name: f.type for f in dataclasses.fields(cfg_type)}
        types = {f.name: type(getattr(cfg_type(), f.name)) for f in dataclasses.fields(cfg_type)}
        kwargs = {}
        for key, value in parser.items(section):
            if key not in fields:
                raise ConfigError(f"unknown key [{section}] {key}")
            try:
                kwargs[key] = _coerce(value, types[key])
            except ValueError as exc:
                raise ConfigError(f"bad value [{section}] {key} = {value}: {exc}") from exc
        try:
            sections[section] = cfg_type(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"invalid [{section}]: {exc}") from exc
    cfg = RunConfig(
        graph=sections.get("graph", GraphConfig()),
        gan=sections.get("gan", AugmentConfig()),
        model=sections.get("model", ModelConfig()),
        train=sections.get("train", TrainConfig()),
        contrast=sections.get("contrast", ContrastConfig()),
        data=data,
        workdir=workdir,
    )
    # the contrastive weight lives in [contrast]; mirror it into the trainer
    # unless [train] pinned its own value
    if parser.has_section("contrast") and parser.has_option("contrast", "lambda_cl"):
        if not (parser.has_section("train") and parser.has_option("train", "lambda_cl")):
            cfg.train.lambda_cl = cfg.contrast.lambda_cl
    return cfg


def config_hash(cfg: RunConfig) -> str:
    """Hash of every semantic field (paths excluded), stable across runs."""
    payload = {
        name: dataclasses.asdict(getattr(cfg, name))
        for name in ("graph", "gan", "model", "train", "contrast")
    }
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
