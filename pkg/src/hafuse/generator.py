"""Multi-scale encoder / attention fusion / decoder generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hafuse import autodiff as ad
from hafuse.autodiff import Tensor
from hafuse.errors import ConfigError, ContractError, DimensionError, GeometryError
from hafuse.params import Initializer, ParamSet


@dataclass(frozen=True)
class GeneratorConfig:
    scales: int = 3
    base_channels: int = 16
    eb_kernels: tuple[int, int] = (3, 5)
    leaky_slope: float = 0.2
    use_sampling: bool = True
    use_skip: bool = True
    use_afs: bool = True
    afs_eps: float = 1e-8
    # "channel": global max over each channel's spatial plane; "joint": over channels and space
    gmp_mode: str = "channel"

    def __post_init__(self):
        object.__setattr__(self, "eb_kernels", tuple(self.eb_kernels))
        if self.scales < 2:
            raise ConfigError(f"scales must be >= 2, got {self.scales}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if len(self.eb_kernels) != 2 or any(k < 1 or k % 2 == 0 for k in self.eb_kernels):
            raise ConfigError(f"eb_kernels must be two odd sizes, got {self.eb_kernels}")
        if self.gmp_mode not in ("channel", "joint"):
            raise ConfigError(f"gmp_mode must be 'channel' or 'joint', got {self.gmp_mode!r}")
        if self.afs_eps <= 0:
            raise ConfigError("afs_eps must be positive")

    def channels(self, k: int) -> int:
        """Feature width at scale ``k`` (1-based)."""
        return self.base_channels * 2 ** (k - 1)

    @property
    def side_multiple(self) -> int:
        return 2 ** (self.scales - 1) if self.use_sampling else 1


def init_generator_params(cfg: GeneratorConfig, seed: int = 0, dtype=np.float32) -> ParamSet:
    params = ParamSet()
    init = Initializer(params, seed, dtype, cfg.leaky_slope)
    ka, kb = cfg.eb_kernels
    for branch in ("ir", "vi"):
        init.conv(f"enc.{branch}.cb", cfg.base_channels, 1, 3)
        in_ch = cfg.base_channels
        for k in range(1, cfg.scales + 1):
            ch = cfg.channels(k)
            init.conv(f"enc.{branch}.eb{k}.conv_a", ch, in_ch, ka)
            init.conv(f"enc.{branch}.eb{k}.conv_b", ch, ch, kb)
            in_ch = ch
    if cfg.use_afs:
        for k in range(1, cfg.scales + 1):
            init.conv(f"afs{k}.conv", cfg.channels(k), 2 * cfg.channels(k), 3)
    for k in range(cfg.scales - 1, 0, -1):
        in_ch = cfg.channels(k + 1) + (cfg.channels(k) if cfg.use_skip else 0)
        init.conv(f"dec.db{k}.conv_a", cfg.channels(k), in_ch, 3)
        init.conv(f"dec.db{k}.conv_b", cfg.channels(k), cfg.channels(k), 3)
    init.conv("dec.out", 1, cfg.channels(1), 3)
    return params


def _conv(x: Tensor, params: ParamSet, prefix: str, slope: float | None = None, stride: int = 1) -> Tensor:
    w = params[f"{prefix}.weight"]
    y = ad.conv2d(x, w, params[f"{prefix}.bias"], stride=stride, padding=w.shape[2] // 2)
    return y if slope is None else ad.leaky_relu(y, slope)


def encode(image: Tensor, params: ParamSet, branch: str, cfg: GeneratorConfig) -> list[Tensor]:
    """CB, then one EB per scale with 2x2 max-pooling in between.

    Returns the ``cfg.scales`` feature maps, finest first.
    """
    if image.shape[1] != 1:
        raise DimensionError(f"encode expects a single-channel image, got {image.shape}")
    m = cfg.side_multiple
    if image.shape[2] % m or image.shape[3] % m:
        raise GeometryError(f"image side {image.shape[2:]} not divisible by {m} for {cfg.scales} scales")
    slope = cfg.leaky_slope
    x = _conv(image, params, f"enc.{branch}.cb", slope)
    feats = []
    for k in range(1, cfg.scales + 1):
        if k > 1 and cfg.use_sampling:
            x = ad.pool2d(x, "max", 2, 2)
        x = _conv(x, params, f"enc.{branch}.eb{k}.conv_a", slope)
        x = _conv(x, params, f"enc.{branch}.eb{k}.conv_b", slope)
        feats.append(x)
    return feats


def _gmp(x: Tensor, mode: str) -> Tensor:
    m = ad.global_pool(x, "max")
    if mode == "joint":
        # max over channels too, repeated back to one value per channel
        m = ad.concat_channels([ad.channel_max_map(m)] * x.shape[1])
    return m


def afs_weights(F_ir: Tensor, F_vi: Tensor, eps: float = 1e-8, gmp_mode: str = "channel") -> tuple[Tensor, Tensor]:
    """Difference-driven weights: each difference map over its own global max."""
    if F_ir.shape != F_vi.shape:
        raise DimensionError(f"AFS inputs differ in shape: {F_ir.shape} vs {F_vi.shape}")
    d_ir = ad.sub(F_ir, F_vi)
    d_vi = ad.sub(F_vi, F_ir)
    mu = ad.div_eps(d_ir, _gmp(d_ir, gmp_mode), eps)
    sigma = ad.div_eps(d_vi, _gmp(d_vi, gmp_mode), eps)
    return mu, sigma


def afs_fuse(F_ir: Tensor, F_vi: Tensor, params: ParamSet, k: int, cfg: GeneratorConfig,
             trace: dict | None = None) -> Tensor:
    mu, sigma = afs_weights(F_ir, F_vi, cfg.afs_eps, cfg.gmp_mode)
    f_ir = ad.add(ad.mul(mu, F_ir), F_ir)
    f_vi = ad.add(ad.mul(sigma, F_vi), F_vi)
    if trace is not None:
        for key, val in (("mu", mu), ("sigma", sigma), ("f_ir", f_ir), ("f_vi", f_vi)):
            trace.setdefault(key, []).append(val)
    return _conv(ad.concat_channels([f_ir, f_vi]), params, f"afs{k}.conv", cfg.leaky_slope)


def overlap_fuse(F_ir: Tensor, F_vi: Tensor) -> Tensor:
    """Plain 0.5/0.5 average used when AFS is ablated."""
    return ad.add(ad.scale(F_ir, 0.5), ad.scale(F_vi, 0.5))


def decode(fused: list[Tensor], params: ParamSet, cfg: GeneratorConfig) -> Tensor:
    if len(fused) != cfg.scales:
        raise ContractError(f"decode needs {cfg.scales} fused scales, got {len(fused)}")
    slope = cfg.leaky_slope
    factor = 2 if cfg.use_sampling else 1
    x = fused[-1]
    for k in range(cfg.scales - 1, 0, -1):
        x = ad.upsample_nearest(x, factor)
        if cfg.use_skip:
            x = ad.concat_channels([x, fused[k - 1]])
        x = _conv(x, params, f"dec.db{k}.conv_a", slope)
        x = _conv(x, params, f"dec.db{k}.conv_b", slope)
    return ad.sigmoid(_conv(x, params, "dec.out"))


def generator_forward(I_ir: Tensor, I_vi: Tensor, params: ParamSet, cfg: GeneratorConfig,
                      trace: dict | None = None) -> Tensor:
    """Fuse an infrared/visible batch into one image batch in (0, 1).

    If ``trace`` is a dict it receives the per-scale ``F_ir``, ``F_vi`` and
    ``F_fused`` lists (plus AFS intermediates when AFS is enabled).
    """
    if I_ir.shape != I_vi.shape:
        raise DimensionError(f"source shapes differ: {I_ir.shape} vs {I_vi.shape}")
    F_ir = encode(I_ir, params, "ir", cfg)
    F_vi = encode(I_vi, params, "vi", cfg)
    fused = []
    for k, (a, b) in enumerate(zip(F_ir, F_vi), start=1):
        fused.append(afs_fuse(a, b, params, k, cfg, trace) if cfg.use_afs else overlap_fuse(a, b))
    if trace is not None:
        trace.update(F_ir=F_ir, F_vi=F_vi, F_fused=fused)
    return decode(fused, params, cfg)


class Generator:
    def __init__(self, cfg: GeneratorConfig | None = None, seed: int = 0, dtype=np.float32,
                 params: ParamSet | None = None):
        self.cfg = cfg or GeneratorConfig()
        self.params = params if params is not None else init_generator_params(self.cfg, seed, dtype)

    def __call__(self, I_ir: Tensor, I_vi: Tensor, trace: dict | None = None) -> Tensor:
        return generator_forward(I_ir, I_vi, self.params, self.cfg, trace)
