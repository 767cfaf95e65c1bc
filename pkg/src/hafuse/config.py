"""Flat YAML run configuration shared by every CLI command.

Keys map onto the dataclass configs with a prefix per group::

    (none)   TrainConfig fields, plus alpha/beta/gamma loss weights
    gen_     GeneratorConfig
    ds_      SalientConfig   (infrared-slot, global discriminator)
    dd_      DetailedConfig  (visible-slot, Markovian discriminator)
    noise_   NoiseSpec
    paths:   data_dir, out_dir

Unknown keys are rejected. Command-line flags override file values.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Any

import yaml

from hafuse.discriminator import DetailedConfig, SalientConfig
from hafuse.errors import ConfigError
from hafuse.generator import GeneratorConfig
from hafuse.losses import LossWeights
from hafuse.metrics import NoiseSpec
from hafuse.trainer import TrainConfig

GROUPS = (
    ("", TrainConfig, {"weights"}),
    ("", LossWeights, set()),
    ("gen_", GeneratorConfig, set()),
    ("ds_", SalientConfig, set()),
    ("dd_", DetailedConfig, set()),
    ("noise_", NoiseSpec, set()),
)
PATH_KEYS = {"data_dir": None, "out_dir": None}

DOCS = {
    "epochs": "passes over the patch set",
    "batch_size": "patches per update",
    "lr": "Adam learning rate for every network",
    "n_dd": "visible-slot discriminator updates per cycle",
    "n_ds": "infrared-slot discriminator updates per cycle",
    "n_g": "generator updates per cycle",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "seed": "master seed for init, shuffling and noise",
    "patch_size": "square training patch side",
    "patch_stride": "patch grid stride (null = patch_size, non-overlapping)",
    "disc_variant": "discriminator combination: full, only_DD, dual_DD, only_DS, dual_DS, no_attention",
    "checkpoint_every": "write a checkpoint every N epochs",
    "alpha": "weight of the basic (content) loss",
    "beta": "weight of the infrared intensity term",
    "gamma": "weight of the visible gradient term",
    "gen_scales": "encoder/decoder scales",
    "gen_base_channels": "feature width at the finest scale (doubles per scale)",
    "gen_eb_kernels": "kernel sizes of the two convolutions in each encoder block",
    "gen_leaky_slope": "negative slope of LeakyReLU",
    "gen_use_sampling": "max-pool / upsample between scales",
    "gen_use_skip": "decoder skip connections",
    "gen_use_afs": "attention fusion (false = 0.5/0.5 overlap)",
    "gen_afs_eps": "guard for division by the global max of a difference map",
    "gen_gmp_mode": "global max pooling per channel ('channel') or over all channels ('joint')",
    "ds_attn_scales": "channel-attention scales",
    "ds_ca_kernel": "1-D kernel length of the channel attention",
    "ds_conv_channels": "widths of the four conv stages",
    "ds_fc_hidden": "hidden units of the first fully connected layer",
    "ds_leaky_slope": "negative slope of LeakyReLU",
    "ds_lift_channels": "attention feature width at the finest scale",
    "ds_use_attention": "prepend multi-scale channel attention maps",
    "dd_attn_scales": "spatial-attention scales",
    "dd_sa_reduction": "channel reduction inside the spatial attention",
    "dd_patch_channels": "widths of the five patch convolutions",
    "dd_patch_strides": "strides of the five patch convolutions",
    "dd_patch_kernel": "kernel size of the patch convolutions",
    "dd_patch_padding": "zero padding of the patch convolutions",
    "dd_leaky_slope": "negative slope of LeakyReLU",
    "dd_lift_channels": "attention feature width at the finest scale",
    "dd_use_attention": "prepend multi-scale spatial attention maps",
    "noise_variance": "variance of the additive Gaussian noise (0 = clean)",
    "noise_seed": "base seed of the noise; image i uses noise_seed + i",
    "data_dir": "dataset root with ir/ and vi/ subdirectories",
    "out_dir": "output directory",
}

PRESETS: dict[str, dict[str, Any]] = {
    "default": {},
    # desk-scale run: 32x32 patches, two scales, two epochs
    "smoke": {"epochs": 2, "batch_size": 4, "patch_size": 32, "gen_scales": 2},
}


def _defaults() -> dict[str, Any]:
    out: dict[str, Any] = {}
    for prefix, cls, skip in GROUPS:
        inst = cls()
        for f in dataclasses.fields(cls):
            if f.name not in skip:
                out[prefix + f.name] = getattr(inst, f.name)
    out.update(PATH_KEYS)
    return out


DEFAULTS = _defaults()


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"config key {key!r} may not be null")
    if key in PATH_KEYS:
        return str(value)
    if key == "patch_stride":
        default = 0
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} expects true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                           for v in value):
            raise ConfigError(f"config key {key!r} expects a list of integers, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} expects a string, got {value!r}")
        return value
    raise ConfigError(f"config key {key!r}: unsupported value {value!r}")


class RunConfig:
    """Validated flat key/value settings; build the typed configs with the accessors."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = dict(DEFAULTS)
        self.update(values or {})

    def update(self, values: dict[str, Any]) -> "RunConfig":
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        for k, v in values.items():
            self.values[k] = _coerce(k, v)
        return self

    def override(self, **flags) -> "RunConfig":
        """Apply command-line values; ``None`` means the flag was not given."""
        return self.update({k: v for k, v in flags.items() if v is not None})

    @classmethod
    def from_preset(cls, name: str) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; valid: {', '.join(PRESETS)}")
        return cls(PRESETS[name])

    @classmethod
    def load(cls, path: str | os.PathLike, base: dict[str, Any] | None = None) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a key/value mapping")
        cfg = cls(base)
        try:
            return cfg.update(data)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def _group(self, prefix: str, cls, skip=()):
        kwargs = {f.name: self.values[prefix + f.name] for f in dataclasses.fields(cls) if f.name not in skip}
        return cls(**kwargs)

    def loss_weights(self) -> LossWeights:
        return self._group("", LossWeights)

    def train_config(self) -> TrainConfig:
        cfg = self._group("", TrainConfig, {"weights"})
        return dataclasses.replace(cfg, weights=self.loss_weights())

    def generator_config(self) -> GeneratorConfig:
        return self._group("gen_", GeneratorConfig)

    def salient_config(self) -> SalientConfig:
        return self._group("ds_", SalientConfig)

    def detailed_config(self) -> DetailedConfig:
        return self._group("dd_", DetailedConfig)

    def noise_spec(self) -> NoiseSpec:
        return self._group("noise_", NoiseSpec)

    def validate(self) -> "RunConfig":
        """Construct every typed config once so range errors surface early."""
        self.train_config()
        self.generator_config()
        self.salient_config()
        self.detailed_config()
        self.noise_spec()
        return self

    def to_yaml(self, documented: bool = True) -> str:
        lines = []
        for key, value in self.values.items():
            if isinstance(value, tuple):
                value = list(value)
            text = yaml.safe_dump({key: value}, default_flow_style=True, width=1000).strip()
            if text.startswith("{") and text.endswith("}"):
                text = text[1:-1]
            lines.append(f"{text:<40s} # {DOCS[key]}" if documented else text)
        return "\n".join(lines) + "\n"
