"""Alternating adversarial training: D_D x4, D_S x2, G x2 per cycle, with Adam."""

from __future__ import annotations

import contextlib
import csv
import io
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from hafuse.autodiff import Tape, Tensor
from hafuse.data import PairDataset, crop_patches
from hafuse.discriminator import DetailedConfig, SalientConfig
from hafuse.errors import ConfigError, ContractError, DimensionError
from hafuse.fusion import DISC_VARIANTS, FusionNets, build_nets
from hafuse.generator import GeneratorConfig
from hafuse.losses import LossWeights, basic_losses, loss_D_detailed, loss_D_salient, total_G
from hafuse.params import ParamSet

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "phase", "L_G", "L_adver", "L_basic", "L_infrared", "L_visible",
               "L_DS", "L_DD", "p_S_real", "p_S_fake", "p_D_real", "p_D_fake")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 2e-4
    n_dd: int = 4
    n_ds: int = 2
    n_g: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patch_size: int = 128
    patch_stride: int | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    disc_variant: str = "full"
    checkpoint_every: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "n_dd", "n_ds", "n_g", "patch_size", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.disc_variant not in DISC_VARIANTS:
            raise ConfigError(f"unknown discriminator combination {self.disc_variant!r}")

    def schedule(self, nets: FusionNets) -> list[str]:
        phases = ["D_D"] * self.n_dd if nets.d_vi is not None else []
        phases += ["D_S"] * self.n_ds if nets.d_ir is not None else []
        return phases + ["G"] * self.n_g


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: ParamSet, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every tensor in ``params`` from its ``.grad``."""
    missing = [k for k in params if params[k].grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {missing[:5]}{'...' if len(missing) > 5 else ''}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k in params:
        p = params[k]
        g = p.grad
        dt = p.dtype.type
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m = state.m[k] = dt(beta1) * state.m[k] + dt(1 - beta1) * g
        v = state.v[k] = dt(beta2) * state.v[k] + dt(1 - beta2) * (g * g)
        m_hat = m / dt(bc1)
        v_hat = v / dt(bc2)
        p.data = p.data - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))


class Adam:
    def __init__(self, params: ParamSet, lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.beta1, self.beta2, self.eps)
        self.params.zero_grad()


# --------------------------------------------------------------------------
# batches and log rows


@dataclass
class Batch:
    ir: Tensor
    vi: Tensor
    epoch: int
    last_in_epoch: bool


@dataclass
class LogRow:
    step: int
    phase: str
    epoch: int
    values: dict[str, float | None]
    wall: float

    def csv_fields(self) -> list[str]:
        out = [str(self.step), self.phase]
        for col in LOG_COLUMNS[2:]:
            v = self.values.get(col)
            out.append("" if v is None else repr(float(v)))
        return out


def batch_stream(patches: list[tuple[np.ndarray, np.ndarray]], batch_size: int, epochs: int, seed: int,
                 dtype=np.float32) -> Iterator[Batch]:
    """Seeded per-epoch shuffles of the patch list, cut into batches."""
    rng = np.random.default_rng(seed)
    n = len(patches)
    for epoch in range(epochs):
        order = rng.permutation(n)
        starts = list(range(0, n, batch_size))
        for i, s in enumerate(starts):
            idx = order[s:s + batch_size]
            ir = np.stack([patches[j][0] for j in idx])[:, None]
            vi = np.stack([patches[j][1] for j in idx])[:, None]
            yield Batch(Tensor(ir, dtype=dtype), Tensor(vi, dtype=dtype), epoch, i == len(starts) - 1)


def _mean_prob(p: Tensor | None) -> float | None:
    return None if p is None else float(p.data.mean())


def _update_disc(disc, opt: Adam, real: Tensor, fake: Tensor, loss_fn) -> tuple[float, float, float]:
    with Tape() as tape:
        p_real = disc(real)
        p_fake = disc(fake)
        loss = loss_fn(p_real, p_fake)
    tape.backward(loss)
    opt.step()
    return loss.item(), _mean_prob(p_real), _mean_prob(p_fake)


def _update_generator(nets: FusionNets, opt: Adam, batch: Batch, weights: LossWeights) -> dict:
    with contextlib.ExitStack() as stack:
        for d in (nets.d_ir, nets.d_vi):
            if d is not None:
                stack.enter_context(d.params.frozen())
        with Tape() as tape:
            fake = nets.generator(batch.ir, batch.vi)
            p_S = nets.d_ir(fake) if nets.d_ir is not None else None
            p_D = nets.d_vi(fake) if nets.d_vi is not None else None
            br = total_G(fake, batch.ir, batch.vi, p_S, p_D, weights)
        tape.backward(br.L_G)
    opt.step()
    vals = {k: v for k, v in br.values().items() if v is not None}
    vals.update(p_S_fake=_mean_prob(p_S), p_D_fake=_mean_prob(p_D))
    return vals


def make_optimizers(nets: FusionNets, cfg: TrainConfig) -> dict[str, Adam]:
    return {slot: Adam(net.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) for slot, net in nets.slots().items()}


def run_update(phase: str, batch: Batch, nets: FusionNets, opts: dict[str, Adam], cfg: TrainConfig) -> dict:
    """One parameter update of the sub-network named by ``phase``."""
    if phase == "G":
        return _update_generator(nets, opts["G"], batch, cfg.weights)
    fake = nets.generator(batch.ir, batch.vi)  # no tape active: generator is untouched
    vals = {k: v for k, v in basic_losses(fake, batch.ir, batch.vi, cfg.weights).values().items() if v is not None}
    if phase == "D_D":
        loss, pr, pf = _update_disc(nets.d_vi, opts["D_D"], batch.vi, fake, loss_D_detailed)
        vals.update(L_DD=loss, p_D_real=pr, p_D_fake=pf)
    elif phase == "D_S":
        loss, pr, pf = _update_disc(nets.d_ir, opts["D_S"], batch.ir, fake, loss_D_salient)
        vals.update(L_DS=loss, p_S_real=pr, p_S_fake=pf)
    else:
        raise ContractError(f"unknown phase {phase!r}")
    return vals


def train_cycle(batches: Iterator[Batch], nets: FusionNets, opts: dict[str, Adam], cfg: TrainConfig,
                first_step: int = 0, on_batch_done=None) -> list[LogRow]:
    """Run one full schedule, drawing a fresh batch per update.

    Stops early (returning the rows so far) when ``batches`` is exhausted.
    """
    rows = []
    for phase in cfg.schedule(nets):
        batch = next(batches, None)
        if batch is None:
            log.info("batch stream exhausted after %d of %d updates; cycle truncated",
                     len(rows), len(cfg.schedule(nets)))
            break
        vals = run_update(phase, batch, nets, opts, cfg)
        rows.append(LogRow(first_step + len(rows), phase, batch.epoch, vals, time.perf_counter()))
        if on_batch_done is not None:
            on_batch_done(batch)
    return rows


# --------------------------------------------------------------------------
# full run


@dataclass
class TrainResult:
    nets: FusionNets
    rows: list[LogRow]
    checkpoints: list[Path]


def write_log_csv(rows: list[LogRow], path: str | os.PathLike | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for r in rows:
        writer.writerow(r.csv_fields())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def epoch_means(rows: list[LogRow]) -> dict[int, dict[str, float]]:
    out: dict[int, dict[str, float]] = {}
    for epoch in sorted({r.epoch for r in rows}):
        sel = [r for r in rows if r.epoch == epoch]
        means = {}
        for col in LOG_COLUMNS[2:]:
            vals = [r.values[col] for r in sel if r.values.get(col) is not None]
            if vals:
                means[col] = float(np.mean(vals))
        out[epoch] = means
    return out


def collect_patches(pairs, size: int, stride: int | None, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    patches = []
    for ir, vi in pairs:
        patches.extend(crop_patches(ir, vi, size, stride))
    if not patches:
        raise ConfigError(f"no {size}x{size} patches could be cut from the dataset")
    return patches


def train(dataset, cfg: TrainConfig, gen_cfg: GeneratorConfig | None = None,
          sal_cfg: SalientConfig | None = None, det_cfg: DetailedConfig | None = None,
          out_dir: str | os.PathLike | None = None) -> TrainResult:
    """Train from a :class:`PairDataset` or a list of ``(GrayImage, GrayImage)`` pairs.

    With ``out_dir`` writes ``train_log.csv``, per-epoch checkpoints and
    ``final.ckpt``. The result is a pure function of the data and configs.
    """
    from hafuse.checkpoint import save_nets

    pairs = dataset.load_all() if isinstance(dataset, PairDataset) else list(dataset)
    if not pairs:
        raise ConfigError("dataset is empty")
    gen_cfg = gen_cfg or GeneratorConfig()
    nets = build_nets(gen_cfg, sal_cfg or SalientConfig(), det_cfg or DetailedConfig(), cfg.disc_variant,
                      cfg.patch_size, seed=cfg.seed)
    opts = make_optimizers(nets, cfg)
    patches = collect_patches(pairs, cfg.patch_size, cfg.patch_stride, cfg.seed)
    batches = batch_stream(patches, cfg.batch_size, cfg.epochs, cfg.seed)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    checkpoints: list[Path] = []

    def on_batch_done(batch: Batch):
        if out is not None and batch.last_in_epoch and (batch.epoch + 1) % cfg.checkpoint_every == 0:
            path = out / f"epoch{batch.epoch + 1:03d}.ckpt"
            save_nets(path, nets, cfg.patch_size)
            checkpoints.append(path)

    rows: list[LogRow] = []
    schedule_len = len(cfg.schedule(nets))
    while True:
        cycle = train_cycle(batches, nets, opts, cfg, len(rows), on_batch_done)
        rows.extend(cycle)
        if len(cycle) < schedule_len:
            break
    if out is not None:
        path = out / "final.ckpt"
        save_nets(path, nets, cfg.patch_size)
        checkpoints.append(path)
        write_log_csv(rows, out / "train_log.csv")
    return TrainResult(nets, rows, checkpoints)


def fuse_image(nets: FusionNets, ir: np.ndarray, vi: np.ndarray) -> np.ndarray:
    """Run the generator on one ``(h, w)`` pair; returns a float64 image in (0, 1).

    Sides that the pooling pyramid cannot divide are edge-padded up to the next
    multiple and the result is cropped back, so output size equals input size.
    """
    if ir.shape != vi.shape:
        raise DimensionError(f"source shapes differ: {ir.shape} vs {vi.shape}")
    m = nets.generator.cfg.side_multiple
    h, w = ir.shape
    pad = ((0, -h % m), (0, -w % m))
    dt = nets.generator.params.dtype
    ir_t = Tensor(np.pad(ir, pad, mode="edge")[None, None], dtype=dt)
    vi_t = Tensor(np.pad(vi, pad, mode="edge")[None, None], dtype=dt)
    out = nets.generator(ir_t, vi_t)
    return out.data[0, 0, :h, :w].astype(np.float64)
