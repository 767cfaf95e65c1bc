"""Generator and discriminator objectives."""

from __future__ import annotations

from dataclasses import dataclass, fields

from hafuse import autodiff as ad
from hafuse.autodiff import Tensor
from hafuse.errors import ConfigError, DimensionError

# probability labels: generator target, real and fake targets for both discriminators
PHI = 1.0
XI_REAL, XI_FAKE = 1.0, 0.0
ZETA_REAL, ZETA_FAKE = 1.0, 0.0


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 100.0
    beta: float = 5.0
    gamma: float = 5.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise ConfigError(f"loss weights must be strictly positive: {self}")


@dataclass
class LossBreakdown:
    """Scalar loss tensors; terms that were not computed stay ``None``."""

    L_G: Tensor | None = None
    L_adver: Tensor | None = None
    L_basic: Tensor | None = None
    L_infrared: Tensor | None = None
    L_visible: Tensor | None = None
    L_D: Tensor | None = None
    L_DS: Tensor | None = None
    L_DD: Tensor | None = None

    def values(self) -> dict[str, float | None]:
        return {f.name: (None if getattr(self, f.name) is None else getattr(self, f.name).item())
                for f in fields(self)}


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes differ {a.shape} vs {b.shape}")


def loss_infrared(I_f: Tensor, I_ir: Tensor) -> Tensor:
    """Mean squared intensity error against the infrared source."""
    _same_shape(I_f, I_ir, "loss_infrared")
    return ad.mean_all(ad.square(ad.sub(I_f, I_ir)))


def loss_visible(I_f: Tensor, I_vi: Tensor) -> Tensor:
    """Mean absolute difference of Sobel gradient magnitudes."""
    _same_shape(I_f, I_vi, "loss_visible")
    return ad.mean_all(ad.absolute(ad.sub(ad.sobel_gradient(I_f), ad.sobel_gradient(I_vi))))


def _sq_dist(p: Tensor, label: float) -> Tensor:
    return ad.mean_all(ad.square(ad.add_scalar(p, -label)))


def loss_adversarial_G(p_S: Tensor | None, p_D: Tensor | None) -> Tensor:
    """Least-squares generator term; a missing discriminator contributes nothing."""
    terms = [_sq_dist(p, PHI) for p in (p_S, p_D) if p is not None]
    if not terms:
        raise ConfigError("adversarial loss needs at least one discriminator")
    return terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])


def _loss_D(p_real: Tensor, p_fake: Tensor, real_label: float, fake_label: float) -> Tensor:
    return ad.add(ad.scale(_sq_dist(p_real, real_label), 0.5), ad.scale(_sq_dist(p_fake, fake_label), 0.5))


def loss_D_salient(p_real: Tensor, p_fake: Tensor) -> Tensor:
    return _loss_D(p_real, p_fake, XI_REAL, XI_FAKE)


def loss_D_detailed(p_real: Tensor, p_fake: Tensor) -> Tensor:
    return _loss_D(p_real, p_fake, ZETA_REAL, ZETA_FAKE)


def basic_losses(I_f: Tensor, I_ir: Tensor, I_vi: Tensor, w: LossWeights) -> LossBreakdown:
    L_inf = loss_infrared(I_f, I_ir)
    L_vis = loss_visible(I_f, I_vi)
    return LossBreakdown(L_basic=ad.add(L_vis, ad.scale(L_inf, w.beta)), L_infrared=L_inf, L_visible=L_vis)


def total_G(I_f: Tensor, I_ir: Tensor, I_vi: Tensor, p_S: Tensor | None, p_D: Tensor | None,
            w: LossWeights = LossWeights()) -> LossBreakdown:
    br = basic_losses(I_f, I_ir, I_vi, w)
    br.L_adver = loss_adversarial_G(p_S, p_D)
    br.L_G = ad.add(br.L_adver, ad.scale(br.L_basic, w.alpha))
    return br


def total_D(p_S_real: Tensor | None, p_S_fake: Tensor | None, p_D_real: Tensor | None,
            p_D_fake: Tensor | None, w: LossWeights = LossWeights()) -> LossBreakdown:
    br = LossBreakdown()
    if p_S_real is not None:
        br.L_DS = loss_D_salient(p_S_real, p_S_fake)
    if p_D_real is not None:
        br.L_DD = loss_D_detailed(p_D_real, p_D_fake)
    if br.L_DS is not None and br.L_DD is not None:
        br.L_D = ad.add(br.L_DD, ad.scale(br.L_DS, w.gamma))
    elif br.L_DD is not None:
        br.L_D = br.L_DD
    elif br.L_DS is not None:
        br.L_D = ad.scale(br.L_DS, w.gamma)
    return br
