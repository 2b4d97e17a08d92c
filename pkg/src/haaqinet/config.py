"""Run configuration: one JSON document holding every knob of a pipeline run."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .corpus import CorpusConfig
from .distill import DistillTrainConfig, StudentConfig
from .dsp.levels import SPL_SWEEP_LEVELS
from .features.encoder import EncoderConfig
from .model import VARIANTS
from .predictor import PredictorConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    quantiles: int = 9
    tolerance: float = 0.05
    levels: tuple = SPL_SWEEP_LEVELS
    sweep_clips: int = 100
    splits: tuple = ("test-seen", "test-unseen")


@dataclass
class BenchConfig:
    variants: tuple = ("teacher", "student")
    clips: int = 5
    repeats: int = 3


@dataclass
class RunConfig:
    seed: int
    variant: str = "ws-adapter"
    n_clean: int = 20
    clean_duration_s: float = 2.0
    label_provider: str = "proxy-oracle"
    dtype: str = "float32"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillTrainConfig = field(default_factory=DistillTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    paths: dict = field(default_factory=dict)

    def validate(self, required_paths=()):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, not {self.dtype!r}")
        for key in required_paths:
            p = self.paths.get(key)
            if not p:
                raise ConfigError(f"paths.{key} is required")
            if not Path(p).exists():
                raise ConfigError(f"paths.{key} does not exist: {p}")

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "variant": self.variant, "n_clean": self.n_clean,
             "clean_duration_s": self.clean_duration_s, "label_provider": self.label_provider,
             "dtype": self.dtype, "paths": dict(self.paths)}
        for name in ("corpus", "encoder", "predictor", "student", "train", "distill", "eval", "bench"):
            sub = getattr(self, name)
            d[name] = sub.to_dict() if hasattr(sub, "to_dict") else asdict(sub)
        return json.loads(json.dumps(d))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


_SECTIONS = {"corpus": CorpusConfig, "encoder": EncoderConfig, "predictor": PredictorConfig,
             "student": StudentConfig, "train": TrainConfig, "distill": DistillTrainConfig,
             "eval": EvalConfig, "bench": BenchConfig}
_TUPLES = {"eval": ("levels", "splits"), "bench": ("variants",), "student": ("tapped_layers",),
           "corpus": ("unseen_families",)}


def _section(name, cls, data):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    data = dict(data)
    for k in _TUPLES.get(name, ()):
        if k in data:
            data[k] = tuple(data[k])
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {name} section: {e}") from e


def from_dict(d: dict) -> RunConfig:
    if "seed" not in d:
        raise ConfigError("seed is mandatory")
    top = {k: v for k, v in d.items() if k not in _SECTIONS}
    known = {f.name for f in fields(RunConfig)}
    unknown = set(top) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    sections = {name: _section(name, cls, d.get(name, {})) for name, cls in _SECTIONS.items()}
    try:
        return RunConfig(**top, **sections)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return from_dict(d)
