"""Pipeline configuration: one JSON file, nested dataclasses, two profiles."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataset import SCALER_METHODS, SyntheticSpec
from .diffusion import DiffusionConfig
from .evaluation import ClassifierConfig
from .segloss import DEFAULT_WEIGHTS
from .seqmodel import SeqModelConfig, TrainSchedule


class ConfigError(ValueError):
    pass


@dataclass
class SegmentConfig:
    degree: int = 20
    weights: tuple = DEFAULT_WEIGHTS
    # equal quarters instead of exit code 4 when the curve is degenerate
    fallback: bool = False


@dataclass
class EvalConfig:
    repetitions: int = 100
    fraction: float = 0.8
    first_per_class: int = 100  # diffusion samples per class for Table I
    gen_per_class: int = 25  # generated sequences per class and window
    windows: tuple = (1, 3, 5)
    table1: bool = True
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)


@dataclass
class PipelineConfig:
    corpus: str | None = None  # bundle directory; None synthesizes
    test_corpus: str | None = None  # None splits ``corpus`` in half per class
    synthetic: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(
        class_separation=0.2, level_correlation=0.9))
    scaler: str = "unit_interval"
    diffusion: DiffusionConfig = field(default_factory=lambda: DiffusionConfig(epochs=300))
    seq: SeqModelConfig = field(default_factory=SeqModelConfig)
    schedule: TrainSchedule = field(default_factory=lambda: TrainSchedule(
        phases=[["weighted", 200, 1e-3], ["mse", 100, 1e-3], ["weighted", 100, 1e-4]], epoch_scale=0.25))
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def digest(self) -> str:
        return config_hash(self.to_dict())

    def validate(self):
        for name in ("corpus", "test_corpus"):
            p = getattr(self, name)
            if p is not None and not (Path(p) / "manifest.json").exists():
                raise ConfigError(f"{name}: no corpus bundle at {p}")
        if self.test_corpus is not None and self.corpus is None:
            raise ConfigError("test_corpus needs corpus")
        if self.scaler not in SCALER_METHODS:
            raise ConfigError(f"scaler must be one of {SCALER_METHODS}, got {self.scaler!r}")
        ev = self.evaluation
        if ev.repetitions < 1 or not 0 < ev.fraction <= 1:
            raise ConfigError("evaluation needs repetitions >= 1 and 0 < fraction <= 1")
        if ev.first_per_class < 3 or ev.gen_per_class < 1:
            raise ConfigError("first_per_class must be >= 3 and gen_per_class >= 1")
        if any(int(w) < 1 for w in ev.windows):
            raise ConfigError("every window size must be >= 1")
        if self.segment.degree < 1 or len(self.segment.weights) != 4 or min(self.segment.weights) <= 0:
            raise ConfigError("segmentation needs degree >= 1 and four positive weights")
        if self.schedule.batch_size < 1 or self.schedule.epoch_scale <= 0 or self.schedule.noise_std < 0:
            raise ConfigError("schedule needs batch_size >= 1, epoch_scale > 0, noise_std >= 0")
        for kind, epochs, lr in self.schedule.phases:
            if kind not in ("weighted", "mse") or int(epochs) < 0 or float(lr) < 0:
                raise ConfigError(f"bad schedule phase {(kind, epochs, lr)}")
        try:
            self.diffusion.validate()
            self.seq.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _build(cls, data: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    return cls(**data)


def from_dict(d: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    """Overlay ``d`` on ``base`` (desk profile by default); nested sections merge key by key."""
    merged = (base or PipelineConfig()).to_dict()
    for key, value in d.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            if key == "evaluation" and "classifier" in value:
                merged[key]["classifier"].update(value["classifier"])
                value = {k: v for k, v in value.items() if k != "classifier"}
            if key == "synthetic":
                # per-class waveform lists are redrawn unless given explicitly
                for derived in ("onsets", "start_levels", "plateau_levels", "frequencies"):
                    merged[key][derived] = None
            merged[key].update(value)
        else:
            merged[key] = value
    top = {f.name for f in fields(PipelineConfig)}
    if set(merged) - top:
        raise ConfigError(f"unknown config keys {sorted(set(merged) - top)}")
    try:
        ev = dict(merged["evaluation"])
        ev["classifier"] = _build(ClassifierConfig, ev["classifier"])
        ev["windows"] = tuple(ev["windows"])
        seg = dict(merged["segment"])
        seg["weights"] = tuple(seg["weights"])
        return PipelineConfig(
            corpus=merged["corpus"], test_corpus=merged["test_corpus"],
            synthetic=_build(SyntheticSpec, merged["synthetic"]),
            scaler=merged["scaler"],
            diffusion=_build(DiffusionConfig, merged["diffusion"]),
            seq=_build(SeqModelConfig, merged["seq"]),
            schedule=_build(TrainSchedule, merged["schedule"]),
            segment=_build(SegmentConfig, seg),
            evaluation=_build(EvalConfig, ev),
            seed=int(merged["seed"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def paper_scale() -> PipelineConfig:
    """Full-size profile: T=610, d=34, width 512, depth 6, full epoch counts. Slow."""
    return from_dict({
        "synthetic": {"length": 610, "channels": 34, "duration_lo": 200, "duration_hi": 560},
        "diffusion": {"epochs": 1500},
        "seq": {"width": 512, "heads": 8, "depth": 6, "length": 610, "features": 34},
        "schedule": {"phases": [["weighted", 200, 1e-4], ["mse", 100, 1e-4], ["weighted", 100, 1e-5]],
                     "epoch_scale": 1.0},
    })


def load_config(path=None, paper: bool = False) -> PipelineConfig:
    base = paper_scale() if paper else PipelineConfig()
    if path is None:
        return base
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(data, base)
