"""Run configuration: a TOML file of per-module sections plus command-line overrides."""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .audio import FbankConfig
from .evaluation.runs import EvalOptions
from .pipeline import SegmentOptions
from .segmentation import VadConfig
from .ssm.model import PRESETS, ModelConfig, preset
from .synthetic import DEFAULT_PROFILES, ClassProfile, GenConfig
from .training import LossConfig, OptimConfig

# Desk-scale training: the defaults in OptimConfig assume a far larger corpus
# (1000 warmup steps would outlast a whole run on 64 training recordings).
DESK_OPTIM = dict(lr0=1e-3, epochs=4, warmup_steps=32, decay_start_epoch=2)


class ConfigError(ValueError):
    pass


def _fields(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: str, values: dict, allowed: set) -> None:
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    generate: dict = field(default_factory=dict)
    fbank: dict = field(default_factory=dict)
    vad: dict = field(default_factory=dict)
    segment: dict = field(default_factory=dict)
    model: dict = field(default_factory=lambda: {"preset": "tiny"})
    loss: dict = field(default_factory=dict)
    optim: dict = field(default_factory=lambda: dict(DESK_OPTIM))
    text: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    SECTIONS = ("generate", "fbank", "vad", "segment", "model", "loss", "optim", "text", "eval")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Build every module config once so bad values fail before any work starts."""
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        _check_keys("text", self.text, {"l2"})
        try:
            self.gen_config()
            self.fbank_config()
            self.segment_options()
            self.model_config()
            self.loss_config()
            self.optim_config()
            self.eval_options()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def gen_config(self) -> GenConfig:
        g = dict(self.generate)
        profiles = g.pop("profiles", None)
        _check_keys("generate", g, _fields(GenConfig) - {"seed", "profiles"})
        kwargs = _tuples(g)
        if profiles is not None:
            merged = dict(DEFAULT_PROFILES)
            for name, values in profiles.items():
                _check_keys(f"generate.profiles.{name}", values, _fields(ClassProfile))
                base = merged.get(name, ClassProfile(0.0, 150.0, 0.0, 5.0))
                merged[name] = dataclasses.replace(base, **values)
            kwargs["profiles"] = merged
        return GenConfig(seed=self.seed, **kwargs)

    def fbank_config(self) -> FbankConfig:
        _check_keys("fbank", self.fbank, _fields(FbankConfig))
        return FbankConfig(**self.fbank)

    def segment_options(self) -> SegmentOptions:
        _check_keys("vad", self.vad, _fields(VadConfig))
        _check_keys("segment", self.segment, _fields(SegmentOptions) - {"vad"})
        return SegmentOptions(**self.segment, vad=VadConfig(**self.vad))

    def model_config(self) -> ModelConfig:
        m = dict(self.model)
        name = m.pop("preset", None)
        _check_keys("model", m, _fields(ModelConfig))
        m = _tuples(m)
        if name is None:
            return ModelConfig(**m)
        if name not in PRESETS:
            raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}")
        return preset(name, **m)

    def loss_config(self) -> LossConfig:
        _check_keys("loss", self.loss, _fields(LossConfig))
        return LossConfig(**_tuples(self.loss))

    def optim_config(self) -> OptimConfig:
        _check_keys("optim", self.optim, _fields(OptimConfig))
        return OptimConfig(**self.optim)

    def eval_options(self) -> EvalOptions:
        _check_keys("eval", self.eval, _fields(EvalOptions))
        return EvalOptions(**self.eval)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys("top level", d, {"seed", "workers", *cls.SECTIONS})
        kwargs = dict(d)
        for name in cls.SECTIONS:
            if name in kwargs and not isinstance(kwargs[name], dict):
                raise ConfigError(f"[{name}] must be a table")
        if "optim" in kwargs:
            kwargs["optim"] = {**DESK_OPTIM, **kwargs["optim"]}
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(Path(path), "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def override(self, **values) -> "RunConfig":
        """New config with dotted-key overrides (``"segment.max_dur"``); ``None`` values are skipped."""
        d = dataclasses.asdict(self)
        for key, value in values.items():
            if value is None:
                continue
            if "." in key:
                section, name = key.split(".", 1)
                d[section] = {**d[section], name: value}
            else:
                d[key] = value
        return RunConfig(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
