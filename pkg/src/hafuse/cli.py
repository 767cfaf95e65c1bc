"""``hafuse`` command line: train, fuse, eval, gradcheck, ablate, make-synth, defaults.

Exit codes: 0 success, 1 internal contract violation, 2 usage/config error,
3 data error (missing/unreadable/malformed files), 4 numeric failure,
5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from hafuse.config import PRESETS, RunConfig
from hafuse.data import DataError, GrayImage, PairDataset, load_pgm, make_synthetic, save_pgm
from hafuse.errors import (ConfigError, ContractError, DimensionError, FormatError, GeometryError, NumericError,
                           ParameterError)
from hafuse.fusion import VARIANTS, resolve_variant

log = logging.getLogger("hafuse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _run_config(args, **flags) -> RunConfig:
    cfg = RunConfig.from_preset(args.preset)
    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config, base=cfg.values)
    cfg.override(seed=getattr(args, "seed", None), **flags)
    return cfg.validate()


def _existing_dir(path: str | None, flag: str) -> Path:
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{flag} {path}: no such directory")
    return p


def _write_text(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _print_epoch_means(rows) -> None:
    from hafuse.trainer import epoch_means

    for epoch, means in epoch_means(rows).items():
        parts = " ".join(f"{k}={v:.5g}" for k, v in means.items()
                         if k in ("L_G", "L_adver", "L_basic", "L_infrared", "L_visible", "L_DS", "L_DD"))
        print(f"epoch {epoch + 1}: {parts}")


def _train(cfg: RunConfig, data_dir: Path, out_dir: Path, gen_cfg=None, disc_variant=None):
    from hafuse.trainer import train

    tc = cfg.train_config()
    if disc_variant is not None:
        import dataclasses
        tc = dataclasses.replace(tc, disc_variant=disc_variant)
    result = train(PairDataset.from_dir(data_dir), tc, gen_cfg or cfg.generator_config(), cfg.salient_config(),
                   cfg.detailed_config(), out_dir)
    _print_epoch_means(result.rows)
    return result


def _evaluate_nets(nets, dataset: PairDataset, noise=None):
    """Metric rows for every pair; with ``noise`` also rows fused from noisy visible inputs."""
    from hafuse.metrics import NoiseSpec, add_gaussian_noise, evaluate_pair
    from hafuse.trainer import fuse_image

    clean, noisy = [], []
    for i, image_id in enumerate(dataset.ids()):
        ir, vi = dataset.load(i)
        fused = fuse_image(nets, ir.pixels, vi.pixels)
        clean.append((image_id, evaluate_pair(GrayImage(fused), ir, vi)))
        if noise is not None:
            vi_n = add_gaussian_noise(vi, NoiseSpec(noise.variance, noise.seed + i))
            fused_n = fuse_image(nets, ir.pixels, vi_n.pixels)
            noisy.append((f"{image_id}:noisy", evaluate_pair(GrayImage(fused_n), ir, vi_n)))
    return clean, noisy


def _metrics_text(clean, noisy) -> str:
    from hafuse.metrics import metrics_csv

    text = metrics_csv(clean)
    if noisy:
        text += metrics_csv(noisy, mean_label="mean:noisy").split("\n", 1)[1]
    return text


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _run_config(args, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                      patch_size=args.patch_size, data_dir=args.data_dir, out_dir=args.out_dir)
    data_dir = _existing_dir(cfg["data_dir"], "--data-dir")
    if not cfg["out_dir"]:
        raise UsageError("--out-dir is required")
    out = Path(cfg["out_dir"])
    _train(cfg, data_dir, out)
    print(f"wrote {out / 'final.ckpt'} and {out / 'train_log.csv'}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    from hafuse.checkpoint import load_nets
    from hafuse.trainer import fuse_image

    nets = load_nets(args.ckpt)
    ir, vi = load_pgm(args.ir), load_pgm(args.vi)
    if ir.pixels.shape != vi.pixels.shape:
        raise UsageError(f"infrared {ir.width}x{ir.height} and visible {vi.width}x{vi.height} differ in size")
    fused = fuse_image(nets, ir.pixels, vi.pixels)
    save_pgm(GrayImage(fused), args.out)
    print(f"wrote {args.out} ({ir.width}x{ir.height})")
    return EXIT_OK


def cmd_eval(args) -> int:
    from hafuse.metrics import NoiseSpec, evaluate_pair

    cfg = _run_config(args, noise_variance=args.noise_variance, noise_seed=args.noise_seed,
                      data_dir=args.data_dir)
    data_dir = _existing_dir(cfg["data_dir"], "--data-dir")
    dataset = PairDataset.from_dir(data_dir)
    noise = NoiseSpec(cfg["noise_variance"], cfg["noise_seed"]) if args.noise_requested else None

    if args.fused_dir:
        if args.ckpt:
            raise UsageError("give either --fused-dir or --ckpt, not both")
        if noise is not None:
            raise UsageError("--noise-variance re-runs the generator and needs --ckpt")
        fused_dir = _existing_dir(args.fused_dir, "--fused-dir")
        clean, noisy = [], []
        for i, image_id in enumerate(dataset.ids()):
            ir, vi = dataset.load(i)
            fused = load_pgm(fused_dir / f"{image_id}.pgm")
            if fused.pixels.shape != ir.pixels.shape:
                raise DataError(f"fused {image_id}: {fused.pixels.shape} vs sources {ir.pixels.shape}")
            clean.append((image_id, evaluate_pair(fused, ir, vi)))
    elif args.ckpt:
        from hafuse.checkpoint import load_nets
        clean, noisy = _evaluate_nets(load_nets(args.ckpt), dataset, noise)
    else:
        raise UsageError("eval needs --fused-dir or --ckpt")
    _write_text(_metrics_text(clean, noisy), args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from hafuse.gradcheck import ALL_CASES, format_report, run_suite

    if args.scale < 1 or args.seeds < 1:
        raise UsageError("--scale and --seeds must be positive")
    cases = [c for c in ALL_CASES if not args.only or any(sel in c.name for sel in args.only)]
    if not cases:
        raise UsageError(f"--only matched no case; available: {', '.join(c.name for c in ALL_CASES)}")
    reports = run_suite(args.seeds, args.scale, cases, on_report=lambda r: print(format_report(r), flush=True))
    failed = [r.name for r in reports if not r.passed]
    total = sum(r.seconds for r in reports)
    if failed:
        print(f"gradcheck FAILED for: {', '.join(failed)} ({total:.1f}s)")
        return EXIT_GRADCHECK
    print(f"gradcheck passed: {len(reports)} cases ({total:.1f}s)")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.variant not in VARIANTS:
        raise UsageError(f"unknown variant {args.variant!r}; valid variants: {', '.join(VARIANTS)}")
    cfg = _run_config(args, data_dir=args.data_dir, out_dir=args.out_dir)
    data_dir = _existing_dir(cfg["data_dir"], "--data-dir")
    if not cfg["out_dir"]:
        raise UsageError("--out-dir is required")
    out = Path(cfg["out_dir"]) / args.variant
    gen_cfg, disc_variant = resolve_variant(args.variant, cfg.generator_config())
    result = _train(cfg, data_dir, out, gen_cfg, disc_variant)
    clean, _ = _evaluate_nets(result.nets, PairDataset.from_dir(args.eval_dir or data_dir))
    text = _metrics_text(clean, [])
    (out / "metrics.csv").write_text(text, encoding="utf-8")
    print(f"{args.variant}: " + text.strip().splitlines()[-1])
    return EXIT_OK


def cmd_make_synth(args) -> int:
    if args.n < 1 or args.size < 16:
        raise UsageError("--n must be >= 1 and --size >= 16")
    make_synthetic(args.out_dir, args.n, args.size, args.seed)
    print(f"wrote {args.n} pairs of {args.size}x{args.size} to {args.out_dir}")
    return EXIT_OK


def cmd_defaults(args) -> int:
    sys.stdout.write(RunConfig.from_preset(args.preset).to_yaml())
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hafuse", description=__doc__.split("\n")[0])
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="flat YAML run config")
        sp.add_argument("--preset", default="default", choices=sorted(PRESETS), help="base settings before --config")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--data-dir", help="dataset root with ir/ and vi/")

    sp = sub.add_parser("train", help="train generator and discriminators")
    common(sp)
    sp.add_argument("--out-dir")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--patch-size", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("fuse", help="fuse one infrared/visible PGM pair")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--ir", required=True)
    sp.add_argument("--vi", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("eval", help="compute EN, AG, SF, FMI, VIF, UIQI per pair")
    common(sp)
    sp.add_argument("--fused-dir", help="directory of fused PGMs named like the pairs")
    sp.add_argument("--ckpt", help="fuse the dataset with this checkpoint first")
    sp.add_argument("--noise-variance", type=float, nargs="?", const=None, default=argparse.SUPPRESS,
                    help="also fuse from noisy visible inputs (no value: use the config's noise_variance)")
    sp.add_argument("--noise-seed", type=int)
    sp.add_argument("--out", help="CSV path (default: stdout)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    sp.add_argument("--scale", type=int, default=1, help="multiplier on the toy spatial sizes")
    sp.add_argument("--seeds", type=int, default=20)
    sp.add_argument("--only", nargs="*", help="run only cases whose name contains one of these")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate", help="train and evaluate one ablation variant")
    common(sp)
    sp.set_defaults(preset="smoke")
    sp.add_argument("--variant", required=True, help=", ".join(VARIANTS))
    sp.add_argument("--out-dir")
    sp.add_argument("--eval-dir", help="evaluate on this dataset instead of the training data")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("make-synth", help="write a synthetic infrared/visible dataset")
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_make_synth)

    sp = sub.add_parser("defaults", help="print the documented default config")
    sp.add_argument("--preset", default="default", choices=sorted(PRESETS))
    sp.set_defaults(func=cmd_defaults)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.noise_requested = hasattr(args, "noise_variance")
        if not args.noise_requested:
            args.noise_variance = None
        logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, ConfigError, DimensionError, GeometryError, ParameterError) as exc:
        print(f"hafuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, OSError) as exc:
        print(f"hafuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"hafuse: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as exc:
        print(f"hafuse: internal contract violation: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
