"""Run configuration: three small dataclasses and a flat key/value file format.

A config file is plain text, one ``section.field = value`` per line, with
``#`` comments and blank lines ignored. Parsing starts from defaults, so a
file only needs the fields it overrides. ``parse_config(render_config(c))``
returns an equal config. The ``EVIT_SEED`` environment variable, when set,
overrides ``train.seed`` after the file is read.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .attention import ConnectionPattern
from .backbone import VARIANTS, VariantSpec, reduced_variant
from .errors import ConfigError
from .feedforward import FfnKind


@dataclass
class ModelConfig:
    variant: str = "tiny"
    width_divisor: int = 4  # 1 keeps the published width
    blocks_per_stage: int = 1  # 0 keeps the variant's own depths
    pattern: str = "bifovea"
    ffn: str = "bffn"
    input_size: int = 32
    num_classes: int = 2
    zero_classifier: bool = True


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 300
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.05
    cosine: bool = False


@dataclass
class DataConfig:
    source: str = "synthetic"  # "synthetic" or a directory of per-class images
    count: int = 256
    noise: float = 0.08


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig}


def render_config(config: RunConfig) -> str:
    """Serialize to the flat key/value format, grouped by section."""
    lines = []
    for section in _SECTIONS:
        obj = getattr(config, section)
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{section}.{f.name} = {value}")
    return "\n".join(lines) + "\n"


def _convert(raw: str, target_type, key: str):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {target_type.__name__}, got {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    """Parse the flat format; unknown keys raise ConfigError."""
    config = RunConfig()
    types = {
        (section, f.name): f.type
        for section, cls in _SECTIONS.items()
        for f in dataclasses.fields(cls)
    }
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'section.field = value', got {line!r}")
        key = key.strip()
        section, dot, name = key.partition(".")
        if not dot or (section, name) not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        target = {"int": int, "float": float, "bool": bool, "str": str}[types[(section, name)]]
        setattr(getattr(config, section), name, _convert(value, target, key))
    return config


def read_config(path: str | os.PathLike) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def write_config(config: RunConfig, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(render_config(config))


def apply_env_overrides(config: RunConfig) -> RunConfig:
    """Apply environment overrides; EVIT_SEED takes precedence over the file."""
    raw = os.environ.get("EVIT_SEED")
    if raw is not None:
        try:
            config.train.seed = int(raw)
        except ValueError:
            raise ConfigError(f"EVIT_SEED must be an integer, got {raw!r}") from None
    return config


# ---------------------------------------------------------------------------
# translation to build arguments
# ---------------------------------------------------------------------------


def pattern_from_string(name: str) -> ConnectionPattern:
    try:
        return ConnectionPattern(name)
    except ValueError:
        choices = sorted(p.value for p in ConnectionPattern)
        raise ConfigError(f"unknown connection pattern {name!r}; choose from {choices}") from None


def ffn_from_string(name: str) -> FfnKind:
    try:
        return FfnKind(name)
    except ValueError:
        choices = sorted(k.value for k in FfnKind)
        raise ConfigError(f"unknown feedforward kind {name!r}; choose from {choices}") from None


def spec_from_model_config(model: ModelConfig) -> VariantSpec:
    """Resolve a ModelConfig to a concrete stage table."""
    if model.variant not in VARIANTS:
        raise ConfigError(
            f"unknown variant {model.variant!r}; choose from {sorted(VARIANTS)}"
        )
    base = VARIANTS[model.variant]
    if model.width_divisor < 1 or model.blocks_per_stage < 0:
        raise ConfigError(
            f"width_divisor must be >= 1 and blocks_per_stage >= 0, got "
            f"{model.width_divisor}, {model.blocks_per_stage}"
        )
    return reduced_variant(
        base,
        width_divisor=model.width_divisor,
        blocks_per_stage=model.blocks_per_stage or None,
        num_classes=model.num_classes,
    )
