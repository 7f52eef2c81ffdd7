"""Run configuration: one JSON document with a section per pipeline stage.

Every field has a default and unknown keys are rejected, so a config is
validated completely before any work starts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Optional

from .core import DEFAULT_PRIORS, Priors
from .encoder import AGGREGATIONS, CROSS_ATTENTION
from .errors import ValidationError
from .formats import read_json
from .metrics import ADCFConfig
from .synthgen import SynthConfig
from .training import TrainConfig
from .trials import TrialBuildConfig


@dataclass(frozen=True)
class EncoderConfig:
    aggregation: str = CROSS_ATTENTION
    n_heads: int = 4
    self_token: bool = True
    init_seed: int = 0

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ValidationError(f"encoder.aggregation must be one of {AGGREGATIONS}")
        if self.n_heads < 1:
            raise ValidationError("encoder.n_heads must be positive")


@dataclass(frozen=True)
class ScoringConfig:
    pi_eval: tuple[float, float, float] = DEFAULT_PRIORS.as_tuple()

    def __post_init__(self):
        if len(self.pi_eval) != 3:
            raise ValidationError("scoring.pi_eval needs three priors")
        object.__setattr__(self, "pi_eval", tuple(float(p) for p in self.pi_eval))
        Priors(*self.pi_eval)

    @property
    def priors(self) -> Priors:
        return Priors(*self.pi_eval)


@dataclass(frozen=True)
class MetricsConfig:
    c_miss: float = 1.0
    c_fa_non: float = 10.0
    c_fa_spf: float = 10.0
    normalize: bool = True
    n_bins: int = 50
    by_attack: bool = True

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValidationError("metrics.n_bins must be at least 1")
        ADCFConfig(DEFAULT_PRIORS, self.c_miss, self.c_fa_non, self.c_fa_spf, self.normalize)

    def adcf(self, priors: Priors) -> ADCFConfig:
        return ADCFConfig(priors, self.c_miss, self.c_fa_non, self.c_fa_spf, self.normalize)


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    trials: TrialBuildConfig = field(default_factory=TrialBuildConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> dict:
        return {f.name: dataclasses.asdict(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, section: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


def _check_value(where: str, default: Any, value: Any) -> None:
    if default is None:  # optional seed
        ok = value is None or (isinstance(value, int) and not isinstance(value, bool))
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ValidationError(f"{where} has the wrong type: {value!r}")


def _section(cls, name: str, raw: Any):
    if not isinstance(raw, Mapping):
        raise ValidationError(f"config section {name!r} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = set(raw) - set(known)
    if unknown:
        raise ValidationError(f"unknown key(s) in section {name!r}: {', '.join(sorted(unknown))}")
    for key, value in raw.items():
        _check_value(f"{name}.{key}", known[key].default, value)
    return cls(**raw)


def run_config_from_dict(doc: Mapping) -> RunConfig:
    if not isinstance(doc, Mapping):
        raise ValidationError("config must be a JSON object")
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = set(doc) - set(sections)
    if unknown:
        raise ValidationError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, f in sections.items():
        if name in doc:
            kwargs[name] = _section(f.default_factory().__class__, name, doc[name])
    return RunConfig(**kwargs)


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """Parse a config file; ``None`` gives the bundled 50-speaker synthetic setup."""
    if path is None:
        return RunConfig()
    return run_config_from_dict(read_json(path))


def bundled_config_text() -> str:
    return resources.files("threeclass_sasv").joinpath("configs/synthetic50.json").read_text()
