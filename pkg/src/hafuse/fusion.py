"""The generator plus its two discriminator slots, and the ablation variants."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from hafuse.discriminator import DetailedConfig, DetailedDiscriminator, SalientConfig, SalientDiscriminator
from hafuse.errors import ConfigError
from hafuse.generator import Generator, GeneratorConfig

# discriminator combinations: which architecture sits in the infrared and visible slots
DISC_VARIANTS = {
    "full": ("salient", "detailed"),
    "only_DD": (None, "detailed"),
    "dual_DD": ("detailed", "detailed"),
    "only_DS": ("salient", None),
    "dual_DS": ("salient", "salient"),
    "no_attention": ("salient", "detailed"),
}
GENERATOR_VARIANTS = {
    "no_sampling": {"use_sampling": False},
    "no_skip": {"use_skip": False},
    "no_afs": {"use_afs": False},
}
VARIANTS = tuple(DISC_VARIANTS) + tuple(GENERATOR_VARIANTS)


def resolve_variant(name: str, gen_cfg: GeneratorConfig) -> tuple[GeneratorConfig, str]:
    """Split an ablation name into a generator config and a discriminator combination."""
    if name in GENERATOR_VARIANTS:
        return dataclasses.replace(gen_cfg, **GENERATOR_VARIANTS[name]), "full"
    if name in DISC_VARIANTS:
        return gen_cfg, name
    raise ConfigError(f"unknown variant {name!r}; valid: {', '.join(VARIANTS)}")


@dataclass
class FusionNets:
    generator: Generator
    d_ir: SalientDiscriminator | DetailedDiscriminator | None  # trained against infrared ("D_S" slot)
    d_vi: SalientDiscriminator | DetailedDiscriminator | None  # trained against visible ("D_D" slot)
    disc_variant: str = "full"

    def slots(self) -> dict:
        out = {"G": self.generator}
        if self.d_ir is not None:
            out["D_S"] = self.d_ir
        if self.d_vi is not None:
            out["D_D"] = self.d_vi
        return out


def _make_disc(kind, sal_cfg, det_cfg, input_size, seed, dtype):
    if kind == "salient":
        return SalientDiscriminator(sal_cfg, input_size, seed, dtype)
    if kind == "detailed":
        return DetailedDiscriminator(det_cfg, input_size, seed, dtype)
    return None


def build_nets(gen_cfg: GeneratorConfig, sal_cfg: SalientConfig, det_cfg: DetailedConfig,
               disc_variant: str, patch_size: int, seed: int = 0, dtype=np.float32) -> FusionNets:
    if disc_variant not in DISC_VARIANTS:
        raise ConfigError(f"unknown discriminator combination {disc_variant!r}")
    if disc_variant == "no_attention":
        sal_cfg = dataclasses.replace(sal_cfg, use_attention=False)
        det_cfg = dataclasses.replace(det_cfg, use_attention=False)
    ir_kind, vi_kind = DISC_VARIANTS[disc_variant]
    size = (patch_size, patch_size)
    # distinct seeds per slot so dual variants do not start from identical weights
    return FusionNets(
        generator=Generator(gen_cfg, seed, dtype),
        d_ir=_make_disc(ir_kind, sal_cfg, det_cfg, size, seed + 1, dtype),
        d_vi=_make_disc(vi_kind, sal_cfg, det_cfg, size, seed + 2, dtype),
        disc_variant=disc_variant,
    )
