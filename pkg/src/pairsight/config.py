"""Experiment configuration: versioned YAML schema, strict validation.

Unknown keys are rejected so a typo in a run file fails loudly instead of
silently falling back to a default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .optics import PhasematchParams, PixelGrid
from .sensing import CameraModel, truncated_geometric_pmf

__all__ = ["ExperimentConfig", "load_config", "parse_config", "default_config_dict"]

SOURCE_KINDS = ("coherent", "spdc-untrained", "spdc-trained", "spdc-ideal")
DEFAULT_SHOT_GRID = (2, 6, 10, 20, 50, 100)


@dataclass(frozen=True)
class SourceConfig:
    kind: str = "spdc-trained"
    mu00: float = -0.8
    alpha_lz: float = 0.0
    delta_lz: float = 0.0125
    amplitude: float = 1.0
    slm_size: int | None = None  # default: the (2n-1) spectrum window
    aperture_width: float = 0.8  # Gaussian waist as a fraction of half-window
    coherent_width: float = 0.45  # mean-field waist fraction for coherent kind

    def phasematch(self) -> PhasematchParams:
        return PhasematchParams(self.mu00, self.alpha_lz, self.delta_lz,
                                self.amplitude)


@dataclass(frozen=True)
class CameraConfig:
    em_gain: float = 1000.0
    electrons_per_count: float = 1.85
    quantum_efficiency: float = 0.905
    background_kind: str = "geometric"  # geometric | pmf | none
    background_mean: float = 0.05
    background_k_max: int = 5
    background_probs: tuple = ()

    def model(self) -> CameraModel:
        if self.background_kind == "none":
            pmf = np.array([1.0])
        elif self.background_kind == "pmf":
            pmf = np.asarray(self.background_probs, dtype=np.float64)
        elif self.background_kind == "geometric":
            pmf = truncated_geometric_pmf(self.background_mean,
                                          self.background_k_max)
        else:
            raise ConfigError(f"unknown background kind {self.background_kind!r}")
        return CameraModel(em_gain=self.em_gain,
                           electrons_per_count=self.electrons_per_count,
                           quantum_efficiency=self.quantum_efficiency,
                           background_pmf=pmf)


@dataclass(frozen=True)
class DatasetConfig:
    classes: int = 5
    per_class: int = 5
    region: int = 23
    max_shift: int = 2


@dataclass(frozen=True)
class TrainConfig:
    cycles: int = 10
    physical_epochs: int = 1
    digital_epochs: int = 5
    batch_size: int = 8
    set_size: int = 10
    lr_physical: float = 0.05
    lr_digital: float = 1e-4
    quant_levels: int = 0  # 0 disables phase quantization
    augment: bool = False


@dataclass(frozen=True)
class TransformerConfig:
    dim: int = 64
    heads: int = 4
    ff_mult: int = 4
    hidden: int = 128


@dataclass(frozen=True)
class EvalConfig:
    budgets: tuple = ()  # pair-event counts; empty = use the train n_events
    shots: tuple = DEFAULT_SHOT_GRID
    sets_per_object: int = 20
    augment: bool = False
    augment_passes: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 16
    dq: float = 1.0
    n_events: int = 20
    seed: int = 1234
    source: SourceConfig = field(default_factory=SourceConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def grid(self) -> PixelGrid:
        return PixelGrid(self.n, self.dq)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# schema
# --------------------------------------------------------------------------

def _check(cond, message):
    if not cond:
        raise ConfigError(message)


def _coerce(section: str, raw: dict, fields: dict) -> dict:
    _check(isinstance(raw, dict), f"{section} must be a mapping")
    unknown = set(raw) - set(fields)
    _check(not unknown, f"unknown {section} keys: {sorted(unknown)}")
    out = {}
    for key, (kind, check) in fields.items():
        if key not in raw or raw[key] is None:
            continue
        value = raw[key]
        if kind is float and isinstance(value, int):
            value = float(value)
        if kind is tuple and isinstance(value, list):
            value = tuple(value)
        _check(isinstance(value, kind),
               f"{section}.{key} must be {getattr(kind, '__name__', kind)}")
        if check is not None:
            _check(check(value), f"{section}.{key} out of range: {value!r}")
        out[key] = value
    return out


_POS = lambda v: v > 0
_NONNEG = lambda v: v >= 0
_FRAC = lambda v: 0 <= v <= 1

_SOURCE_FIELDS = {
    "kind": (str, lambda v: v in SOURCE_KINDS),
    "mu00": (float, np.isfinite),
    "alpha_lz": (float, np.isfinite),
    "delta_lz": (float, np.isfinite),
    "amplitude": (float, _NONNEG),
    "slm_size": (int, lambda v: v >= 3),
    "aperture_width": (float, _POS),
    "coherent_width": (float, _POS),
}
_CAMERA_FIELDS = {
    "em_gain": (float, _POS),
    "electrons_per_count": (float, _POS),
    "quantum_efficiency": (float, lambda v: 0 < v <= 1),
    "background_kind": (str, lambda v: v in ("geometric", "pmf", "none")),
    "background_mean": (float, _NONNEG),
    "background_k_max": (int, _POS),
    "background_probs": (tuple, lambda v: all(x >= 0 for x in v)),
}
_DATASET_FIELDS = {
    "classes": (int, lambda v: 1 <= v <= 5),
    "per_class": (int, _POS),
    "region": (int, lambda v: v >= 3),
    "max_shift": (int, _NONNEG),
}
_TRAIN_FIELDS = {
    "cycles": (int, _POS),
    "physical_epochs": (int, _POS),
    "digital_epochs": (int, _POS),
    "batch_size": (int, _POS),
    "set_size": (int, _POS),
    "lr_physical": (float, _NONNEG),
    "lr_digital": (float, _POS),
    "quant_levels": (int, lambda v: v == 0 or v >= 2),
    "augment": (bool, None),
}
_TRANSFORMER_FIELDS = {
    "dim": (int, _POS),
    "heads": (int, _POS),
    "ff_mult": (int, _POS),
    "hidden": (int, _POS),
}
_EVAL_FIELDS = {
    "budgets": (tuple, lambda v: all(isinstance(x, int) and x > 0 for x in v)),
    "shots": (tuple, lambda v: len(v) > 0 and all(isinstance(x, int) and x > 0 for x in v)),
    "sets_per_object": (int, _POS),
    "augment": (bool, None),
    "augment_passes": (int, _POS),
}
_TOP_FIELDS = {
    "version": (int, lambda v: v == 1),
    "seed": (int, _NONNEG),
    "n": (int, lambda v: v >= 2),
    "dq": (float, _POS),
    "n_events": (int, _POS),
    "source": (dict, None),
    "camera": (dict, None),
    "dataset": (dict, None),
    "train": (dict, None),
    "transformer": (dict, None),
    "eval": (dict, None),
}


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping against the versioned schema."""
    _check(isinstance(raw, dict), "config must be a mapping")
    _check(raw.get("version") == 1, "config must declare version: 1")
    top = _coerce("config", raw, _TOP_FIELDS)
    cfg = ExperimentConfig(
        n=top.get("n", 16),
        dq=top.get("dq", 1.0),
        n_events=top.get("n_events", 20),
        seed=top.get("seed", 1234),
        source=SourceConfig(**_coerce("source", raw.get("source", {}),
                                      _SOURCE_FIELDS)),
        camera=CameraConfig(**_coerce("camera", raw.get("camera", {}),
                                      _CAMERA_FIELDS)),
        dataset=DatasetConfig(**_coerce("dataset", raw.get("dataset", {}),
                                        _DATASET_FIELDS)),
        train=TrainConfig(**_coerce("train", raw.get("train", {}),
                                    _TRAIN_FIELDS)),
        transformer=TransformerConfig(
            **_coerce("transformer", raw.get("transformer", {}),
                      _TRANSFORMER_FIELDS)),
        eval=EvalConfig(**_coerce("eval", raw.get("eval", {}), _EVAL_FIELDS)),
    )
    _check(cfg.dataset.region <= cfg.n,
           f"dataset.region {cfg.dataset.region} exceeds grid n {cfg.n}")
    _check(cfg.transformer.dim % cfg.transformer.heads == 0,
           "transformer.dim must be divisible by heads")
    if cfg.camera.background_kind == "pmf":
        total = sum(cfg.camera.background_probs)
        _check(abs(total - 1.0) <= 1e-10, "camera.background_probs must sum to 1")
    min_slm = 2 * cfg.n - 1
    if cfg.source.slm_size is not None:
        _check(cfg.source.slm_size >= min_slm,
               f"source.slm_size must be >= {min_slm} for n={cfg.n}")
    return cfg


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}")
    if seed_override is not None:
        raw = dict(raw or {})
        raw["seed"] = int(seed_override)
    return parse_config(raw or {})


def default_config_dict() -> dict:
    """A complete, commented-equivalent config mapping with defaults."""
    cfg = ExperimentConfig()
    raw = {"version": 1, "n": cfg.n, "dq": cfg.dq, "n_events": cfg.n_events,
           "seed": cfg.seed,
           "source": asdict(cfg.source), "camera": asdict(cfg.camera),
           "dataset": asdict(cfg.dataset), "train": asdict(cfg.train),
           "transformer": asdict(cfg.transformer), "eval": asdict(cfg.eval)}
    raw["camera"]["background_probs"] = list(cfg.camera.background_probs)
    raw["eval"]["budgets"] = list(cfg.eval.budgets)
    raw["eval"]["shots"] = list(cfg.eval.shots)
    return raw
