"""Run configuration: typed sections, a dot-path text format, and overrides.

The on-disk format is one ``section.field = value`` assignment per line with
``#`` comments, so a full run is reproducible from a single diffable file.
Override flags reuse the same ``dot.path=value`` syntax and are type-checked
against the dataclass schema; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_args, get_origin, get_type_hints

from .errors import ConfigurationError, FormatError


@dataclass
class ModelSection:
    image_size: int = 64
    conditions: int = 3
    encoder_widths: tuple[int, ...] = (16, 64, 128)
    residual_width: int = 32
    upsample_widths: tuple[int, ...] = (16, 8)
    disc_widths: tuple[int, ...] = (16, 32, 64, 128)


@dataclass
class LossSection:
    personalized: float = 10.0
    adversarial: float = 1.0
    triplet: float = 0.1
    margin: float = 0.2


@dataclass
class TrainerSection:
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    epochs: int = 30
    seed: int = 0
    checkpoint_every: int = 1000
    wrong_mode: str = "sample-one"  # or "sum-all"


@dataclass
class DataSection:
    source: str = "synth"  # or "manifest"
    manifest: str = ""
    root: str = ""
    age_group: str = "old"
    young_count: int = 120
    aged_per_occupation: int = 40
    eval_count: int = 30
    amplitude: float = 0.45
    clutter: float = 0.2


@dataclass
class Config:
    model: ModelSection = field(default_factory=ModelSection)
    losses: LossSection = field(default_factory=LossSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    data: DataSection = field(default_factory=DataSection)

    def validate(self) -> "Config":
        t = self.trainer
        if t.lr <= 0:
            raise ConfigurationError("trainer.lr must be > 0")
        if not (0 <= t.beta1 < 1 and 0 <= t.beta2 < 1):
            raise ConfigurationError("trainer.beta1/beta2 must be in [0, 1)")
        if t.epochs < 1:
            raise ConfigurationError("trainer.epochs must be >= 1")
        if t.batch_size < 1:
            raise ConfigurationError("trainer.batch_size must be >= 1")
        if t.wrong_mode not in ("sample-one", "sum-all"):
            raise ConfigurationError(f"unknown trainer.wrong_mode '{t.wrong_mode}'")
        if self.data.source not in ("synth", "manifest"):
            raise ConfigurationError(f"unknown data.source '{self.data.source}'")
        if self.data.age_group not in ("middle", "old"):
            raise ConfigurationError(f"unknown data.age_group '{self.data.age_group}'")
        if self.losses.personalized < 0 or self.losses.adversarial < 0 or self.losses.triplet < 0:
            raise ConfigurationError("loss weights must be >= 0")
        return self


def full_scale() -> Config:
    """Full-scale preset: 256x256 images, five occupations."""
    cfg = Config()
    cfg.model = ModelSection(
        image_size=256,
        conditions=5,
        encoder_widths=(64, 256, 512),
        residual_width=128,
        upsample_widths=(64, 32),
        disc_widths=(64, 128, 256, 512),
    )
    cfg.trainer.epochs = 200
    return cfg


# ---------------------------------------------------------------------------
# Dot-path access
# ---------------------------------------------------------------------------


def _convert(raw: str, annotation, key: str):
    origin = get_origin(annotation)
    try:
        if origin is tuple:
            item_type = get_args(annotation)[0]
            parts = [p for p in raw.replace(",", " ").split() if p]
            return tuple(item_type(p) for p in parts)
        if annotation is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return annotation(raw)
    except ValueError as exc:
        raise ConfigurationError(
            f"config key '{key}': cannot parse {raw!r} as {annotation}"
        ) from exc


def set_value(config: Config, key: str, raw: str) -> None:
    """Assign ``raw`` to the dot-path ``key``, converting per the schema."""
    if "." not in key:
        raise ConfigurationError(f"config key '{key}' must be 'section.field'")
    section_name, field_name = key.split(".", 1)
    section = getattr(config, section_name, None)
    if section is None or not dataclasses.is_dataclass(section):
        raise ConfigurationError(f"unknown config section '{section_name}'")
    schema = get_type_hints(type(section))
    if field_name not in schema:
        raise ConfigurationError(f"unknown config key '{key}'")
    setattr(section, field_name, _convert(raw, schema[field_name], key))


def to_flat(config: Config) -> dict[str, str]:
    """Flatten to sorted dot-path -> string form (checkpoint snapshot)."""
    flat: dict[str, str] = {}
    for section_field in dataclasses.fields(config):
        section = getattr(config, section_field.name)
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            flat[f"{section_field.name}.{f.name}"] = text
    return dict(sorted(flat.items()))


def from_flat(flat: dict[str, str]) -> Config:
    config = Config()
    for key, raw in flat.items():
        set_value(config, key, raw)
    return config.validate()


def parse_config_text(text: str, source: str = "<config>") -> Config:
    config = Config()
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source} line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        try:
            set_value(config, key, raw)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{source} line {lineno}: {exc}") from exc
    return config


def load_config(path: Path | str | None, overrides: list[str] = ()) -> Config:
    """Config from an optional file plus ``key=value`` override strings."""
    if path is None:
        config = Config()
    else:
        path = Path(path)
        if not path.exists():
            raise FormatError(f"config file not found: {path}")
        config = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override '{item}' must be key=value")
        key, raw = item.split("=", 1)
        set_value(config, key.strip(), raw.strip())
    return config.validate()


def network_shape(config: Config):
    from .networks import NetworkShape

    m = config.model
    return NetworkShape(
        image_size=m.image_size,
        conditions=m.conditions,
        encoder_widths=tuple(m.encoder_widths),
        residual_width=m.residual_width,
        upsample_widths=tuple(m.upsample_widths),
        disc_widths=tuple(m.disc_widths),
    )


def loss_weights(config: Config):
    from .losses import LossWeights

    ls = config.losses
    return LossWeights(
        personalized=ls.personalized,
        adversarial=ls.adversarial,
        triplet=ls.triplet,
        margin=ls.margin,
    )
