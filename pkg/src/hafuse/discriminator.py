"""Salient (global) and detailed (Markovian) discriminators with attention front ends."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hafuse import autodiff as ad
from hafuse.autodiff import Tensor
from hafuse.errors import ConfigError, DimensionError, GeometryError
from hafuse.params import Initializer, ParamSet


@dataclass(frozen=True)
class SalientConfig:
    attn_scales: int = 3
    ca_kernel: int = 3
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    fc_hidden: int = 128
    leaky_slope: float = 0.2
    lift_channels: int = 8
    use_attention: bool = True

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if len(self.conv_channels) != 4:
            raise ConfigError("salient discriminator has exactly four conv stages")
        if self.ca_kernel % 2 == 0 or self.ca_kernel < 1:
            raise ConfigError(f"ca_kernel must be odd, got {self.ca_kernel}")
        if self.attn_scales < 1:
            raise ConfigError("attn_scales must be positive")


@dataclass(frozen=True)
class DetailedConfig:
    attn_scales: int = 3
    sa_reduction: int = 4
    patch_channels: tuple[int, ...] = (16, 32, 64, 128, 1)
    patch_strides: tuple[int, ...] = (2, 2, 2, 1, 1)
    patch_kernel: int = 4
    patch_padding: int = 1
    leaky_slope: float = 0.2
    lift_channels: int = 8
    use_attention: bool = True

    def __post_init__(self):
        object.__setattr__(self, "patch_channels", tuple(self.patch_channels))
        object.__setattr__(self, "patch_strides", tuple(self.patch_strides))
        if len(self.patch_channels) != 5 or len(self.patch_strides) != 5:
            raise ConfigError("detailed discriminator has exactly five conv layers")
        if self.patch_channels[-1] != 1:
            raise ConfigError("last patch layer must emit one channel")
        if self.attn_scales < 1:
            raise ConfigError("attn_scales must be positive")
        for k in range(1, self.attn_scales + 1):
            c = self.lift_channels * 2 ** (k - 1)
            if c % self.sa_reduction:
                raise ConfigError(f"lift width {c} at scale {k} not divisible by sa_reduction {self.sa_reduction}")


def _conv(x, params, prefix, slope=None, stride=1, padding=None):
    w = params[f"{prefix}.weight"]
    pad = w.shape[2] // 2 if padding is None else padding
    y = ad.conv2d(x, w, params.get(f"{prefix}.bias"), stride=stride, padding=pad)
    return y if slope is None else ad.leaky_relu(y, slope)


def _check_attention_geometry(image: Tensor, scales: int) -> None:
    if image.shape[1] != 1:
        raise DimensionError(f"discriminators take single-channel images, got {image.shape}")
    f = 2 ** (scales - 1)
    if image.shape[2] % f or image.shape[3] % f:
        raise GeometryError(f"image side {image.shape[2:]} not divisible by {f} for {scales} attention scales")


# --------------------------------------------------------------------------
# attention modules


def _init_ms_ca(init: Initializer, cfg: SalientConfig) -> None:
    for k in range(1, cfg.attn_scales + 1):
        init.conv(f"ms_ca.lift{k}", cfg.lift_channels * 2 ** (k - 1), 1, 3)
        init.kernel1d(f"ms_ca.eca{k}", cfg.ca_kernel)


def _init_ms_sa(init: Initializer, cfg: DetailedConfig) -> None:
    for k in range(1, cfg.attn_scales + 1):
        c = cfg.lift_channels * 2 ** (k - 1)
        init.conv(f"ms_sa.lift{k}", c, 1, 3)
        init.conv(f"ms_sa.sa{k}.conv_a", c // cfg.sa_reduction, c, 1)
        init.conv(f"ms_sa.sa{k}.conv_b", c, c // cfg.sa_reduction, 1)


def _multi_scale(image: Tensor, scales: int, reweight) -> Tensor:
    maps = []
    for k in range(1, scales + 1):
        f = 2 ** (k - 1)
        x = image if f == 1 else ad.pool2d(image, "avg", f, f)
        weighted = reweight(x, k)
        # channel max commutes with nearest upsampling; reducing first is cheaper
        maps.append(ad.upsample_nearest(ad.channel_max_map(weighted), f))
    return ad.concat_channels(maps)


def channel_attention(features: Tensor, kernel: Tensor) -> Tensor:
    """ECA-style weights: sigmoid of a 1-D conv over the GAP channel descriptor."""
    return ad.sigmoid(ad.conv1d_channels(ad.global_pool(features, "avg"), kernel))


def ms_ca(image: Tensor, params: ParamSet, cfg: SalientConfig) -> Tensor:
    """Multi-scale channel-attention maps, shape ``(b, attn_scales, h, w)``."""
    _check_attention_geometry(image, cfg.attn_scales)

    def reweight(x, k):
        feats = _conv(x, params, f"ms_ca.lift{k}", cfg.leaky_slope)
        return ad.mul(feats, channel_attention(feats, params[f"ms_ca.eca{k}.weight"]))

    return _multi_scale(image, cfg.attn_scales, reweight)


def spatial_attention(features: Tensor, params: ParamSet, prefix: str, slope: float) -> Tensor:
    """Per-pixel weights from a channel-reducing then channel-restoring 1x1 conv pair."""
    hidden = _conv(features, params, f"{prefix}.conv_a", slope)
    return ad.sigmoid(_conv(hidden, params, f"{prefix}.conv_b"))


def ms_sa(image: Tensor, params: ParamSet, cfg: DetailedConfig) -> Tensor:
    """Multi-scale spatial-attention maps, shape ``(b, attn_scales, h, w)``."""
    _check_attention_geometry(image, cfg.attn_scales)

    def reweight(x, k):
        feats = _conv(x, params, f"ms_sa.lift{k}", cfg.leaky_slope)
        return ad.mul(feats, spatial_attention(feats, params, f"ms_sa.sa{k}", cfg.leaky_slope))

    return _multi_scale(image, cfg.attn_scales, reweight)


# --------------------------------------------------------------------------
# salient discriminator


def salient_feature_size(side: int) -> int:
    if side % 16:
        raise GeometryError(f"salient discriminator needs sides divisible by 16, got {side}")
    return side // 16


def init_salient_params(cfg: SalientConfig, input_size: tuple[int, int], seed: int = 0,
                        dtype=np.float32) -> ParamSet:
    h, w = input_size
    fh, fw = salient_feature_size(h), salient_feature_size(w)
    params = ParamSet()
    init = Initializer(params, seed, dtype, cfg.leaky_slope)
    in_ch = 1
    if cfg.use_attention:
        _init_ms_ca(init, cfg)
        in_ch += cfg.attn_scales
    for i, ch in enumerate(cfg.conv_channels, start=1):
        init.conv(f"d_ir.s{i}.conv_a", ch, in_ch, 3)
        init.conv(f"d_ir.s{i}.conv_b", ch, ch, 3)
        in_ch = ch
    init.dense("d_ir.fc1", cfg.fc_hidden, in_ch * fh * fw)
    init.dense("d_ir.fc2", 1, cfg.fc_hidden)
    return params


def salient_features(image: Tensor, params: ParamSet, cfg: SalientConfig) -> Tensor:
    """Pre-flatten feature map of the global discriminative module."""
    salient_feature_size(image.shape[2])
    salient_feature_size(image.shape[3])
    x = image
    if cfg.use_attention:
        x = ad.concat_channels([image, ms_ca(image, params, cfg)])
    for i in range(1, len(cfg.conv_channels) + 1):
        x = _conv(x, params, f"d_ir.s{i}.conv_a", cfg.leaky_slope)
        x = _conv(x, params, f"d_ir.s{i}.conv_b", cfg.leaky_slope, stride=2)
    return x


def d_salient(image: Tensor, params: ParamSet, cfg: SalientConfig) -> Tensor:
    """One probability per batch item, shape ``(b, 1, 1, 1)``."""
    x = salient_features(image, params, cfg)
    x = ad.leaky_relu(ad.dense(x, params["d_ir.fc1.weight"], params["d_ir.fc1.bias"]), cfg.leaky_slope)
    return ad.sigmoid(ad.dense(x, params["d_ir.fc2.weight"], params["d_ir.fc2.bias"]))


# --------------------------------------------------------------------------
# detailed (Markovian) discriminator


def patch_geometry(side: int, cfg: DetailedConfig) -> list[int]:
    """Spatial extent after each patch conv, starting with the input side."""
    sizes = [side]
    for s in cfg.patch_strides:
        span = sizes[-1] + 2 * cfg.patch_padding - cfg.patch_kernel
        if span < 0:
            raise GeometryError(f"patch discriminator collapses below 1 pixel for input side {side}: {sizes}")
        sizes.append(span // s + 1)
    return sizes


def init_detailed_params(cfg: DetailedConfig, seed: int = 0, dtype=np.float32) -> ParamSet:
    params = ParamSet()
    init = Initializer(params, seed, dtype, cfg.leaky_slope)
    in_ch = 1
    if cfg.use_attention:
        _init_ms_sa(init, cfg)
        in_ch += cfg.attn_scales
    for i, ch in enumerate(cfg.patch_channels, start=1):
        init.conv(f"d_vi.conv{i}", ch, in_ch, cfg.patch_kernel)
        in_ch = ch
    return params


def d_detailed(image: Tensor, params: ParamSet, cfg: DetailedConfig) -> tuple[Tensor, Tensor]:
    """Return the per-patch probability matrix and its spatial mean."""
    patch_geometry(image.shape[2], cfg)
    patch_geometry(image.shape[3], cfg)
    x = image
    if cfg.use_attention:
        x = ad.concat_channels([image, ms_sa(image, params, cfg)])
    n = len(cfg.patch_channels)
    for i, s in enumerate(cfg.patch_strides, start=1):
        x = _conv(x, params, f"d_vi.conv{i}", cfg.leaky_slope if i < n else None, stride=s,
                  padding=cfg.patch_padding)
    patches = ad.sigmoid(x)
    return patches, ad.global_pool(patches, "avg")


# --------------------------------------------------------------------------
# object wrappers


class SalientDiscriminator:
    kind = "salient"

    def __init__(self, cfg: SalientConfig | None = None, input_size: tuple[int, int] = (128, 128),
                 seed: int = 0, dtype=np.float32, params: ParamSet | None = None):
        self.cfg = cfg or SalientConfig()
        self.input_size = tuple(input_size)
        self.params = params if params is not None else init_salient_params(self.cfg, self.input_size, seed, dtype)

    def __call__(self, image: Tensor) -> Tensor:
        return d_salient(image, self.params, self.cfg)


class DetailedDiscriminator:
    kind = "detailed"

    def __init__(self, cfg: DetailedConfig | None = None, input_size: tuple[int, int] = (128, 128),
                 seed: int = 0, dtype=np.float32, params: ParamSet | None = None):
        self.cfg = cfg or DetailedConfig()
        self.input_size = tuple(input_size)
        extent = patch_geometry(min(self.input_size), self.cfg)[-1]
        if min(self.input_size) >= 32 and extent <= 1:
            raise ConfigError(f"patch output collapses to {extent}x{extent}; the Markovian discriminator needs > 1")
        self.params = params if params is not None else init_detailed_params(self.cfg, seed, dtype)

    def patches(self, image: Tensor) -> tuple[Tensor, Tensor]:
        return d_detailed(image, self.params, self.cfg)

    def __call__(self, image: Tensor) -> Tensor:
        return d_detailed(image, self.params, self.cfg)[1]
