"""Central finite-difference verification of every backward rule, in float64.

Each case builds random inputs, reduces the output to ``L = sum(out * R)`` for
a random fixed ``R`` and compares the taped gradient of every input against
``(L(x + h e_i) - L(x - h e_i)) / 2h``. Whole networks compare a random
sample of entries per parameter tensor plus one directional derivative along a
random direction in the full parameter space.

Piecewise-linear units (LeakyReLU, max selections) make a central stencil
that straddles a kink return an average of two slopes. Each numeric derivative
is therefore taken at the largest step in ``STEPS`` whose estimate agrees with
the estimate at a quarter of that step; a wrong backward rule disagrees at
every step, a kink only at steps wider than its distance to the break.

The error of one input is ``||analytic - numeric|| / max(||analytic||, ||numeric||)``;
when both norms are below the finite-difference noise floor the input is
treated as having no gradient and scores 0.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from hafuse import autodiff as ad
from hafuse.autodiff import Tape, Tensor
from hafuse.discriminator import (DetailedConfig, SalientConfig, d_detailed, d_salient, init_detailed_params,
                                  init_salient_params, ms_ca, ms_sa)
from hafuse.generator import GeneratorConfig, afs_fuse, afs_weights, generator_forward, init_generator_params
from hafuse.losses import LossWeights, loss_D_detailed, loss_D_salient, loss_visible, total_G
from hafuse.params import ParamSet

F64 = np.float64
STEPS = (1e-5, 1e-6, 1e-7)
OP_TOL = 1e-4
NET_TOL = 1e-3

# make(rng, scale) -> (inputs, fn); fn maps a dict of Tensors to one output Tensor
Builder = Callable[[np.random.Generator, int], tuple[dict[str, np.ndarray], Callable[[dict], Tensor]]]


@dataclass(frozen=True)
class GradCase:
    name: str
    make: Builder
    tol: float = OP_TOL
    sample: int | None = None  # entries checked per input tensor; None = all
    directional: bool = False


@dataclass
class CaseReport:
    name: str
    worst: float
    tol: float
    seeds: int
    seconds: float
    worst_input: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst) and self.worst < self.tol)


# --------------------------------------------------------------------------
# core check


def _loss(fn, arrays: dict[str, np.ndarray], R: np.ndarray) -> float:
    out = fn({k: Tensor(v, dtype=F64) for k, v in arrays.items()})
    return float(np.sum(out.data * R))


def relative_error(a: np.ndarray, n: np.ndarray, floor: float) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def central_difference(loss_at: Callable[[float], float], steps=STEPS, agree: float = 1e-6,
                       floor: float = 1e-8) -> float:
    """Derivative at 0 of ``loss_at`` using the widest smooth-looking step."""
    est = None
    for h in steps:
        wide = (loss_at(h) - loss_at(-h)) / (2 * h)
        narrow = (loss_at(h / 4) - loss_at(-h / 4)) / (h / 2)
        if abs(wide - narrow) <= agree * max(abs(wide), abs(narrow)) + floor:
            return wide
        est = narrow
    return est


def check_once(case: GradCase, seed: int, scale: int = 1, steps=STEPS) -> tuple[float, str]:
    """Worst relative error over the inputs of one seeded instance of ``case``."""
    rng = np.random.default_rng([seed, 0x6AD])
    arrays, fn = case.make(rng, scale)
    arrays = {k: np.asarray(v, dtype=F64) for k, v in arrays.items()}

    tensors = {k: Tensor(v.copy(), requires_grad=True, dtype=F64, name=k) for k, v in arrays.items()}
    with Tape() as tape:
        out = fn(tensors)
        R = rng.standard_normal(out.shape)
        L = ad.sum_all(ad.mul(out, Tensor(R, dtype=F64)))
    tape.backward(L)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    floor = 1e-7 * max(1.0, abs(L.item()))
    fd_floor = 1e-8 * max(1.0, abs(L.item()))

    worst, where = 0.0, ""
    for name, base in arrays.items():
        flat = base.ravel()
        idx = np.arange(flat.size)
        if case.sample is not None and flat.size > case.sample:
            idx = rng.choice(flat.size, size=case.sample, replace=False)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]

            def loss_at(delta, i=i, orig=orig):
                flat[i] = orig + delta
                try:
                    return _loss(fn, arrays, R)
                finally:
                    flat[i] = orig
            numeric[j] = central_difference(loss_at, steps, floor=fd_floor)
        err = relative_error(grads[name].ravel()[idx], numeric, floor)
        if err > worst or not np.isfinite(err):
            worst, where = err, name

    if case.directional:
        dirs = {k: rng.standard_normal(v.shape) for k, v in arrays.items()}
        norm = np.sqrt(sum(np.sum(d * d) for d in dirs.values()))
        dirs = {k: d / norm for k, d in dirs.items()}
        numeric = central_difference(
            lambda delta: _loss(fn, {k: v + delta * dirs[k] for k, v in arrays.items()}, R), steps, floor=fd_floor)
        analytic = sum(float(np.sum(grads[k] * dirs[k])) for k in arrays)
        err = relative_error(np.array([analytic]), np.array([numeric]), floor)
        if err > worst or not np.isfinite(err):
            worst, where = err, "<direction>"
    return worst, where


def run_case(case: GradCase, seeds: int = 20, scale: int = 1) -> CaseReport:
    t0 = time.perf_counter()
    worst, where = 0.0, ""
    for s in range(seeds):
        err, name = check_once(case, s, scale)
        if err > worst or not np.isfinite(err):
            worst, where = err, name
    return CaseReport(case.name, worst, case.tol, seeds, time.perf_counter() - t0, where)


# --------------------------------------------------------------------------
# op cases


def _n(rng, *shape):
    return rng.standard_normal(shape)


def _distinct(rng, *shape):
    """Entries spaced at least 0.01 apart so max-selections are stable under +-h."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 + rng.uniform(0, 0.005)).reshape(shape) - n * 0.005


def _away_from_zero(rng, *shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.2, 2.0, size=shape)


def _conv_case(stride, padding):
    def make(rng, s):
        side = 5 * s
        inputs = {"x": _n(rng, 1, 2, side, side), "weight": _n(rng, 3, 2, 3, 3), "bias": _n(rng, 1, 3, 1, 1)}
        return inputs, lambda t: ad.conv2d(t["x"], t["weight"], t["bias"], stride=stride, padding=padding)
    return make


def _unary(fn, gen=_n, shape=(2, 3, 4, 4)):
    def make(rng, s):
        b, c, hh, ww = shape
        return {"x": gen(rng, b, c, hh * s, ww * s)}, lambda t: fn(t["x"])
    return make


def _binary(kind, broadcast=False):
    def make(rng, s):
        shape = (2, 3, 4 * s, 4 * s)
        bshape = (2, 3, 1, 1) if broadcast else shape
        b = _away_from_zero(rng, *bshape) if kind == "div_eps" else _n(rng, *bshape)
        return {"a": _n(rng, *shape), "b": b}, lambda t: ad.elementwise(t["a"], t["b"], kind)
    return make


def _make_conv1d(rng, s):
    return {"v": _n(rng, 2, 6, 1, 1), "weight": _n(rng, 1, 1, 1, 3)}, lambda t: ad.conv1d_channels(t["v"], t["weight"])


def _make_dense(rng, s):
    inputs = {"x": _n(rng, 2, 3, 2, 2), "weight": _n(rng, 4, 12, 1, 1), "bias": _n(rng, 1, 4, 1, 1)}
    return inputs, lambda t: ad.dense(t["x"], t["weight"], t["bias"])


def _make_concat(rng, s):
    inputs = {"a": _n(rng, 2, 2, 3, 3), "b": _n(rng, 2, 3, 3, 3)}
    return inputs, lambda t: ad.concat_channels([t["a"], t["b"], t["a"]])


def _make_afs_weights(rng, s):
    inputs = {"F_ir": _distinct(rng, 1, 3, 4, 4), "F_vi": _n(rng, 1, 3, 4, 4) * 0.3}

    def fn(t):
        mu, sigma = afs_weights(t["F_ir"], t["F_vi"])
        return ad.concat_channels([mu, sigma])
    return inputs, fn


def _make_afs_fuse(rng, s):
    cfg = GeneratorConfig(scales=2, base_channels=2)
    params = init_generator_params(cfg, seed=int(rng.integers(1 << 30)), dtype=F64)
    names = ["afs1.conv.weight", "afs1.conv.bias"]
    inputs = {"F_ir": _distinct(rng, 1, 2, 4, 4), "F_vi": _n(rng, 1, 2, 4, 4) * 0.3}
    inputs.update({n: params[n].data.copy() for n in names})
    return inputs, lambda t: afs_fuse(t["F_ir"], t["F_vi"], _bind(params, t), 1, cfg)


def _make_sobel(rng, s):
    return {"x": _n(rng, 2, 1, 5 * s, 5 * s)}, lambda t: ad.sobel_gradient(t["x"])


def _make_loss_visible(rng, s):
    side = 6 * s
    inputs = {"I_f": rng.uniform(0, 1, (2, 1, side, side)), "I_vi": rng.uniform(0, 1, (2, 1, side, side))}
    return inputs, lambda t: loss_visible(t["I_f"], t["I_vi"])


def _make_loss_D(fn):
    def make(rng, s):
        inputs = {"p_real": rng.uniform(0.05, 0.95, (3, 1, 2, 2)), "p_fake": rng.uniform(0.05, 0.95, (3, 1, 2, 2))}
        return inputs, lambda t: fn(t["p_real"], t["p_fake"])
    return make


def _make_total_G(rng, s):
    side = 6 * s
    inputs = {k: rng.uniform(0, 1, (2, 1, side, side)) for k in ("I_f", "I_ir", "I_vi")}
    inputs["p_S"] = rng.uniform(0.05, 0.95, (2, 1, 1, 1))
    inputs["p_D"] = rng.uniform(0.05, 0.95, (2, 1, 1, 1))
    return inputs, lambda t: total_G(t["I_f"], t["I_ir"], t["I_vi"], t["p_S"], t["p_D"], LossWeights()).L_G


# --------------------------------------------------------------------------
# network cases


def _bind(params: ParamSet, tensors: dict) -> ParamSet:
    """A ParamSet view where any name present in ``tensors`` is replaced by that tensor."""
    return ParamSet({k: tensors.get(k, params[k]) for k in params})


def _net_case(params: ParamSet, images: dict[str, np.ndarray], forward):
    inputs = {k: v.data.copy() for k, v in params.items()}
    inputs.update(images)
    return inputs, lambda t: forward(t, _bind(params, t))


def _make_generator(rng, s):
    cfg = GeneratorConfig(scales=2, base_channels=4)
    params = init_generator_params(cfg, seed=int(rng.integers(1 << 30)), dtype=F64)
    side = 8 * s
    imgs = {"I_ir": rng.uniform(0, 1, (1, 1, side, side)), "I_vi": rng.uniform(0, 1, (1, 1, side, side))}
    return _net_case(params, imgs, lambda t, p: generator_forward(t["I_ir"], t["I_vi"], p, cfg))


SALIENT_GC = SalientConfig(attn_scales=2, conv_channels=(4, 4, 8, 8), fc_hidden=8, lift_channels=4)
# stride-1 tail keeps a multi-cell patch matrix at 16x16, where the default strides collapse
DETAILED_GC = DetailedConfig(attn_scales=2, patch_channels=(4, 8, 8, 8, 1), patch_strides=(2, 1, 1, 1, 1),
                             lift_channels=4)


def _make_ms_ca(rng, s):
    cfg = dataclasses.replace(SALIENT_GC)
    params = init_salient_params(cfg, (16, 16), seed=int(rng.integers(1 << 30)), dtype=F64)
    params = ParamSet({k: v for k, v in params.items() if k.startswith("ms_ca")})
    side = 8 * s
    return _net_case(params, {"image": rng.uniform(0, 1, (1, 1, side, side))},
                     lambda t, p: ms_ca(t["image"], p, cfg))


def _make_ms_sa(rng, s):
    cfg = DETAILED_GC
    params = init_detailed_params(cfg, seed=int(rng.integers(1 << 30)), dtype=F64)
    params = ParamSet({k: v for k, v in params.items() if k.startswith("ms_sa")})
    side = 8 * s
    return _net_case(params, {"image": rng.uniform(0, 1, (1, 1, side, side))},
                     lambda t, p: ms_sa(t["image"], p, cfg))


def _make_d_salient(rng, s):
    side = 16 * s
    params = init_salient_params(SALIENT_GC, (side, side), seed=int(rng.integers(1 << 30)), dtype=F64)
    return _net_case(params, {"image": rng.uniform(0, 1, (2, 1, side, side))},
                     lambda t, p: d_salient(t["image"], p, SALIENT_GC))


def _make_d_detailed(rng, s):
    side = 16 * s
    params = init_detailed_params(DETAILED_GC, seed=int(rng.integers(1 << 30)), dtype=F64)
    return _net_case(params, {"image": rng.uniform(0, 1, (2, 1, side, side))},
                     lambda t, p: d_detailed(t["image"], p, DETAILED_GC)[0])


def _make_gan_objective(rng, s):
    """Generator loss through both discriminators, w.r.t. every generator parameter."""
    gcfg = GeneratorConfig(scales=2, base_channels=4)
    gp = init_generator_params(gcfg, seed=int(rng.integers(1 << 30)), dtype=F64)
    side = 16 * s
    sp = init_salient_params(SALIENT_GC, (side, side), seed=int(rng.integers(1 << 30)), dtype=F64)
    dp = init_detailed_params(DETAILED_GC, seed=int(rng.integers(1 << 30)), dtype=F64)
    I_ir = Tensor(rng.uniform(0, 1, (1, 1, side, side)), dtype=F64)
    I_vi = Tensor(rng.uniform(0, 1, (1, 1, side, side)), dtype=F64)

    def forward(t, p):
        fake = generator_forward(I_ir, I_vi, p, gcfg)
        p_S = d_salient(fake, sp, SALIENT_GC)
        p_D = d_detailed(fake, dp, DETAILED_GC)[1]
        return total_G(fake, I_ir, I_vi, p_S, p_D, LossWeights()).L_G
    return _net_case(gp, {}, forward)


def _net(name, make, sample=3):
    return GradCase(name, make, tol=NET_TOL, sample=sample, directional=True)


OP_CASES: tuple[GradCase, ...] = (
    GradCase("conv2d", _conv_case(1, 1)),
    GradCase("conv2d/stride2", _conv_case(2, 1)),
    GradCase("conv1d_channels", _make_conv1d),
    GradCase("pool2d/max", _unary(lambda x: ad.pool2d(x, "max", 2, 2), _distinct)),
    GradCase("pool2d/avg", _unary(lambda x: ad.pool2d(x, "avg", 2, 2))),
    GradCase("global_pool/max", _unary(lambda x: ad.global_pool(x, "max"), _distinct)),
    GradCase("global_pool/avg", _unary(lambda x: ad.global_pool(x, "avg"))),
    GradCase("upsample_nearest", _unary(lambda x: ad.upsample_nearest(x, 2))),
    GradCase("dense", _make_dense),
    GradCase("activation/leaky_relu", _unary(lambda x: ad.leaky_relu(x, 0.2), _away_from_zero)),
    GradCase("activation/sigmoid", _unary(ad.sigmoid)),
    GradCase("activation/tanh", _unary(ad.tanh)),
    GradCase("concat_channels", _make_concat),
    GradCase("slice_channels", _unary(lambda x: ad.slice_channels(x, 1, 3))),
    GradCase("channel_max_map", _unary(ad.channel_max_map, _distinct)),
    GradCase("elementwise/add", _binary("add")),
    GradCase("elementwise/sub", _binary("sub")),
    GradCase("elementwise/mul", _binary("mul")),
    GradCase("elementwise/mul_broadcast", _binary("mul", broadcast=True)),
    GradCase("elementwise/div_eps", _binary("div_eps")),
    GradCase("elementwise/div_eps_broadcast", _binary("div_eps", broadcast=True)),
    GradCase("scale", _unary(lambda x: ad.scale(x, -1.7))),
    GradCase("add_scalar", _unary(lambda x: ad.add_scalar(x, 0.3))),
    GradCase("square", _unary(ad.square)),
    GradCase("absolute", _unary(ad.absolute, _away_from_zero)),
    GradCase("sum_all", _unary(ad.sum_all)),
    GradCase("mean_all", _unary(ad.mean_all)),
    GradCase("sobel_gradient", _make_sobel),
    GradCase("afs_weights", _make_afs_weights),
    GradCase("afs_fuse", _make_afs_fuse),
    GradCase("loss_visible", _make_loss_visible),
    GradCase("loss_D_salient", _make_loss_D(loss_D_salient)),
    GradCase("loss_D_detailed", _make_loss_D(loss_D_detailed)),
    GradCase("total_G", _make_total_G),
)

NET_CASES: tuple[GradCase, ...] = (
    _net("ms_ca", _make_ms_ca),
    _net("ms_sa", _make_ms_sa),
    _net("generator", _make_generator),
    _net("d_salient", _make_d_salient),
    _net("d_detailed", _make_d_detailed),
    _net("gan_objective", _make_gan_objective, sample=2),
)

ALL_CASES = OP_CASES + NET_CASES


def run_suite(seeds: int = 20, scale: int = 1, cases=ALL_CASES, on_report=None) -> list[CaseReport]:
    reports = []
    for case in cases:
        rep = run_case(case, seeds, scale)
        reports.append(rep)
        if on_report is not None:
            on_report(rep)
    return reports


def format_report(rep: CaseReport) -> str:
    status = "PASS" if rep.passed else "FAIL"
    where = f" [{rep.worst_input}]" if not rep.passed and rep.worst_input else ""
    return f"{status}  {rep.name:<32s} worst rel err {rep.worst:.3e} (tol {rep.tol:.0e}, {rep.seeds} seeds, " \
           f"{rep.seconds:.1f}s){where}"
