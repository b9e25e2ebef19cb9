"""Textual run configuration: one "key=value" per line, # comments.

Keys are the training hyperparameters, the fusion variant, the
language-model granularity, and input file paths. Unknown keys are
rejected, and every path that is set must exist before any command
starts working.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from fusemt.errors import ConfigError
from fusemt.fusion import VARIANTS
from fusemt.training import TrainConfig

PATH_KEYS = (
    "train_src", "train_tgt", "dev_src", "dev_tgt", "test_src", "test_tgt",
    "mono", "mono_dev", "src_vocab", "tgt_vocab", "lm_vocab", "bpe_merges",
)
LM_LEVELS = ("token", "word")


@dataclass
class RunConfig:
    variant: str = "baseline"
    lm_level: str = "token"
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict[str, str] = field(default_factory=dict)

    def path(self, key: str) -> Path:
        if key not in self.paths:
            raise ConfigError(f"config does not set required path '{key}'")
        return Path(self.paths[key])

    def has(self, key: str) -> bool:
        return key in self.paths

    def require_paths(self, *keys: str) -> None:
        for key in keys:
            self.path(key)


def _train_field_types() -> dict[str, type]:
    out = {}
    for f in dataclasses.fields(TrainConfig):
        out[f.name] = float if f.type in ("float", float) else int
    return out


def parse_run_config(text: str, origin: str = "<config>") -> RunConfig:
    train_types = _train_field_types()
    train_kwargs: dict[str, object] = {}
    cfg = RunConfig()
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw!r}")
        if key in seen:
            raise ConfigError(f"{origin}:{lineno}: duplicate key '{key}'")
        seen.add(key)
        if key == "variant":
            if value not in VARIANTS:
                raise ConfigError(
                    f"{origin}:{lineno}: unknown variant {value!r} "
                    f"(choose from {', '.join(VARIANTS)})"
                )
            cfg.variant = value
        elif key == "lm_level":
            if value not in LM_LEVELS:
                raise ConfigError(
                    f"{origin}:{lineno}: lm_level must be one of {LM_LEVELS}"
                )
            cfg.lm_level = value
        elif key in train_types:
            try:
                train_kwargs[key] = train_types[key](value)
            except ValueError:
                raise ConfigError(
                    f"{origin}:{lineno}: bad value {value!r} for '{key}'"
                ) from None
        elif key in PATH_KEYS:
            cfg.paths[key] = value
        else:
            raise ConfigError(f"{origin}:{lineno}: unknown key '{key}'")
    cfg.train = TrainConfig(**train_kwargs)
    cfg.train.validate()
    return cfg


def load_run_config(path) -> RunConfig:
    """Parse a config file and check that every named input file exists."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_run_config(path.read_text(encoding="utf-8"), origin=str(path))
    for key, value in cfg.paths.items():
        if not Path(value).is_file():
            raise ConfigError(f"{path}: {key} points to a missing file: {value}")
    return cfg
