"""Run configuration: ``key = value`` files merged with command-line overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

from .text import SyntheticDatasetConfig
from .training import TrainingConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig(TrainingConfig):
    dataset_dir: str = "data"
    embeddings: str = ""
    oov_seed: int = 0
    conditions: str = ""
    checkpoint_dir: str = "checkpoints"
    log_path: str = ""
    checkpoint: str = ""
    text: str = ""
    output: str = ""
    n_sentences: int = 20
    extractor: str = "discriminator"
    resume: bool = False
    shapes: tuple = ("circle", "square", "triangle")
    colors: tuple = ("red", "green", "blue", "yellow")
    sizes: tuple = ("small", "large")
    dataset_extent: int = 64
    samples_per_combination: int = 5

    def training_config(self) -> TrainingConfig:
        names = {f.name for f in fields(TrainingConfig)}
        return TrainingConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def dataset_config(self) -> SyntheticDatasetConfig:
        return SyntheticDatasetConfig(tuple(self.shapes), tuple(self.colors), tuple(self.sizes),
                                      self.dataset_extent, self.samples_per_combination, self.seed)

    def validate(self) -> None:
        try:
            super().validate()
            self.dataset_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.n_sentences < 1:
            raise ConfigError("n_sentences must be at least 1")
        if self.extractor not in ("discriminator", "random"):
            raise ConfigError("extractor must be 'discriminator' or 'random'")
        if self.oov_seed < 0:
            raise ConfigError("oov_seed must be non-negative")


_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def _convert(key: str, raw: str):
    default = getattr(_DEFAULTS, key)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_pairs(lines: Iterable[str], source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def load_config(path=None, overrides: Iterable[str] = (), **explicit) -> RunConfig:
    """File values, then ``key=value`` overrides, then explicit keyword values."""
    values = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        values.update(parse_pairs(text.splitlines(), str(p)))
    values.update(parse_pairs(overrides, "<command line>"))
    for k, v in explicit.items():
        if v is None:
            continue
        if k not in _FIELDS:
            raise ConfigError(f"unknown key {k!r}")
        values[k] = v
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
