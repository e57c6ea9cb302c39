"""Run configuration files (JSON) with strict key checking.

Precedence: built-in defaults < config file < command-line flags.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParameterError
from .metrics import SSIMParams
from .networks import DiscriminatorConfig, FeatureExtractorConfig, GeneratorConfig, image_discriminator_config
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    features: FeatureExtractorConfig = field(default_factory=FeatureExtractorConfig)
    ssim: SSIMParams = field(default_factory=SSIMParams)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def override(self, **dotted) -> "RunConfig":
        """Return a copy with ``section.key`` style overrides applied."""
        d = self.to_dict()
        for key, value in dotted.items():
            node = d
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ParameterError(f"unknown config key {key!r}")
            node[leaf] = value
        return RunConfig.from_dict(d)


def _default_of(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return dataclasses.MISSING


def _build(cls, d, prefix):
    if not isinstance(d, dict):
        raise ParameterError(f"config section {prefix.rstrip('.') or '<root>'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in d:
        if key not in fields:
            raise ParameterError(f"unknown config key {prefix + key!r}")
    kwargs = {}
    for name, value in d.items():
        default = _default_of(fields[name])
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ParameterError(f"bad config section {prefix.rstrip('.') or '<root>'}: {exc}") from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(d)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def ablation_configs(base: RunConfig = RunConfig()) -> dict:
    """The full model and its two ablations, keyed by name."""
    weights = dataclasses.replace(base.train.loss_weights, gamma=0.0)
    return {
        "proposed": base,
        "without_saliency": dataclasses.replace(base, train=dataclasses.replace(base.train, loss_weights=weights)),
        "without_patchgan": dataclasses.replace(base, discriminator=image_discriminator_config()),
    }


def config_diff(a: RunConfig, b: RunConfig) -> dict:
    """Dotted keys whose values differ, mapped to ``(a_value, b_value)``."""
    out = {}

    def walk(x, y, prefix):
        for k in sorted(set(x) | set(y)):
            vx, vy = x.get(k), y.get(k)
            if isinstance(vx, dict) and isinstance(vy, dict):
                walk(vx, vy, f"{prefix}{k}.")
            elif vx != vy:
                out[prefix + k] = (vx, vy)

    walk(a.to_dict(), b.to_dict(), "")
    return out
