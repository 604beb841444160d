"""Flat ``key = value`` experiment configuration.

Keys are grouped by prefix: ``dataset.*`` (synthesizer), ``visual.*``
(expert and generator pretraining), ``audio.*`` (encoder architecture),
``train.*`` (alignment training), ``eval.*`` and the top-level ``seed``.
Unknown keys are rejected; missing keys take the defaults below. Tuples
are written as comma-separated integers.
"""

import json
from dataclasses import dataclass, field, fields, replace

from .data import SynthConfig
from .errors import ConfigError
from .objectives import LossTag, LossVariant
from .pairs import PairSource
from .training import AudioConfig, VisualConfig


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 50
    patience: int = 10
    loss_variant: str = LossTag.TOTAL_L2NCE.value
    temperature: float = 1.0
    pair_source: str = PairSource.SELECTED_TOP1.value
    duration_timesteps: int = 20


@dataclass(frozen=True)
class EvalConfig:
    classifier_epochs: int = 300
    classifier_lr: float = 0.05
    score_splits: int = 4
    saliency_clips: int = 16


@dataclass(frozen=True)
class AudioArch:
    hidden: tuple = AudioConfig.hidden


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: SynthConfig = field(default_factory=SynthConfig)
    visual: VisualConfig = field(default_factory=VisualConfig)
    audio: AudioArch = field(default_factory=AudioArch)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 1

    @property
    def synth(self) -> SynthConfig:
        return replace(self.dataset, seed=self.seed)

    @property
    def variant(self) -> LossVariant:
        return LossVariant(self.train.loss_variant, self.train.temperature)

    @property
    def audio_config(self) -> AudioConfig:
        t = self.train
        return AudioConfig(self.audio.hidden, t.batch_size, t.lr, t.weight_decay, t.epochs, t.patience)

    def flat(self) -> dict:
        """The config echo: every key with its resolved value, JSON-ready."""
        out = {"seed": self.seed}
        for section in _SECTIONS:
            for f in fields(getattr(self, section)):
                if section == "dataset" and f.name == "seed":
                    continue
                value = getattr(getattr(self, section), f.name)
                out[f"{section}.{f.name}"] = list(value) if isinstance(value, tuple) else value
        return out

    def to_text(self) -> str:
        lines = []
        for key, value in self.flat().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_SECTIONS = ("dataset", "visual", "audio", "train", "eval")
_SECTION_TYPES = {s: type(getattr(ExperimentConfig(), s)) for s in _SECTIONS}


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            if str(raw).lower() in ("true", "1", "yes"):
                return True
            if str(raw).lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            if isinstance(raw, (list, tuple)):
                items = list(raw)
            else:
                items = [s for s in str(raw).replace(" ", "").split(",") if s]
            return tuple(int(v) for v in items)
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def build_config(values: dict) -> ExperimentConfig:
    """Resolve a flat key/value mapping against the defaults."""
    base = ExperimentConfig()
    updates = {s: {} for s in _SECTIONS}
    seed = base.seed
    for key, raw in values.items():
        if key == "seed":
            seed = _coerce(key, raw, 0)
            continue
        section, _, name = key.partition(".")
        if section not in updates or name not in {f.name for f in fields(_SECTION_TYPES[section])}:
            raise ConfigError(f"unknown config key: {key}")
        if section == "dataset" and name == "seed":
            raise ConfigError("set the seed with the top-level 'seed' key")
        updates[section][name] = _coerce(key, raw, getattr(getattr(base, section), name))
    try:
        parts = {s: replace(getattr(base, s), **updates[s]) for s in _SECTIONS}
        cfg = ExperimentConfig(**parts, seed=seed)
        cfg.synth  # validates dataset values together with the seed
        cfg.variant
        PairSource(cfg.train.pair_source)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        values[key] = value.strip()
    return values


def load_config_text(text: str) -> ExperimentConfig:
    """Parse either a key/value file or a JSON report carrying a config echo."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config: {exc}") from None
        values = doc.get("config", doc) if isinstance(doc, dict) else None
        if not isinstance(values, dict):
            raise ConfigError("JSON config must be an object")
        return build_config(values)
    return build_config(parse_config_text(text))
