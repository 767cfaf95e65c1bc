"""Grayscale image I/O, aligned patch extraction and synthetic IR/visible pairs."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hafuse.autodiff import sobel_xy
from hafuse.errors import DimensionError, FormatError, HafuseError

log = logging.getLogger(__name__)

PGM_MAGIC = b"P5"


class DataError(HafuseError, OSError):
    """A dataset directory or image file is missing or inconsistent."""


@dataclass
class GrayImage:
    """Single-channel image, ``pixels`` is a float64 ``(height, width)`` array in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise DimensionError(f"GrayImage needs a non-empty 2-D array, got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_bytes8(cls, values: np.ndarray) -> "GrayImage":
        return cls(np.asarray(values, dtype=np.float64) / 255.0)

    def to_bytes8(self) -> np.ndarray:
        return quantize(self.pixels)


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 8-bit with round-half-up."""
    return np.clip(np.floor(np.asarray(pixels, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# PGM


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int, int]:
    """Skip whitespace and comments; return ``(token, token_start, end)``."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated PGM header", offset=start)
    return buf[start:pos], start, pos


def parse_pgm(buf: bytes) -> GrayImage:
    if buf[:2] != PGM_MAGIC:
        raise FormatError(f"expected binary PGM magic 'P5', found {buf[:2]!r}", offset=0)
    pos = 2
    fields = []
    starts = []
    for label in ("width", "height", "maxval"):
        tok, tok_start, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"PGM {label} is not a number: {tok!r}", offset=tok_start)
        fields.append(int(tok))
        starts.append(tok_start)
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"PGM dimensions must be positive, got {width}x{height}", offset=starts[0])
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", offset=starts[2])
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after PGM maxval", offset=pos)
    pos += 1
    need = width * height
    have = len(buf) - pos
    if have < need:
        raise FormatError(f"truncated PGM payload: need {need} bytes, have {have}", offset=pos + have)
    values = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(height, width)
    return GrayImage.from_bytes8(values)


def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.to_bytes8().tobytes()


def load_pgm(path: str | os.PathLike) -> GrayImage:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return parse_pgm(buf)
    except FormatError as exc:
        err = FormatError(f"{path}: {exc}")
        err.offset = exc.offset
        raise err from None


def save_pgm(img: GrayImage, path: str | os.PathLike) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_pgm(img))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# datasets


@dataclass
class PairDataset:
    """Aligned (infrared, visible) file pairs in lexicographic filename order."""

    pairs: list[tuple[Path, Path]]

    @classmethod
    def from_dir(cls, root: str | os.PathLike) -> "PairDataset":
        root = Path(root)
        ir_dir, vi_dir = root / "ir", root / "vi"
        if not ir_dir.is_dir() or not vi_dir.is_dir():
            raise DataError(f"{root} must contain 'ir' and 'vi' subdirectories")
        ir_names = sorted(p.name for p in ir_dir.glob("*.pgm"))
        vi_names = sorted(p.name for p in vi_dir.glob("*.pgm"))
        if ir_names != vi_names:
            raise DataError(f"{root}: ir/ and vi/ hold different file names")
        if not ir_names:
            raise DataError(f"{root}: no .pgm pairs found")
        return cls([(ir_dir / n, vi_dir / n) for n in ir_names])

    def __len__(self) -> int:
        return len(self.pairs)

    def ids(self) -> list[str]:
        return [p[0].stem for p in self.pairs]

    def load(self, index: int) -> tuple[GrayImage, GrayImage]:
        ir_path, vi_path = self.pairs[index]
        ir, vi = load_pgm(ir_path), load_pgm(vi_path)
        if ir.pixels.shape != vi.pixels.shape:
            raise DataError(f"pair {ir_path.name}: infrared {ir.pixels.shape} vs visible {vi.pixels.shape}")
        return ir, vi

    def load_all(self) -> list[tuple[GrayImage, GrayImage]]:
        return [self.load(i) for i in range(len(self))]


def crop_patches(ir: GrayImage, vi: GrayImage, size: int, stride: int | None = None,
                 seed: int | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Grid-crop aligned patches at identical offsets, optionally shuffled by ``seed``."""
    if ir.pixels.shape != vi.pixels.shape:
        raise DimensionError(f"pair shapes differ: {ir.pixels.shape} vs {vi.pixels.shape}")
    stride = stride or size
    h, w = ir.pixels.shape
    if h < size or w < size:
        log.warning("image %dx%d smaller than patch size %d; no patches", w, h, size)
        return []
    out = []
    for top in range(0, h - size + 1, stride):
        for left in range(0, w - size + 1, stride):
            sl = (slice(top, top + size), slice(left, left + size))
            out.append((ir.pixels[sl].copy(), vi.pixels[sl].copy()))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(out))
        out = [out[i] for i in order]
    return out


# --------------------------------------------------------------------------
# synthetic modality pairs


@dataclass
class SyntheticPair:
    ir: GrayImage
    vi: GrayImage
    mask: np.ndarray  # bool, True inside thermal targets


def sobel_energy(pixels: np.ndarray) -> float:
    gx, gy = sobel_xy(np.asarray(pixels, dtype=np.float64))
    return float(np.mean(np.sqrt(gx * gx + gy * gy)))


def synth_pair(rng: np.random.Generator, size: int) -> SyntheticPair:
    yy, xx = np.mgrid[0:size, 0:size] / size

    # infrared: smooth background plus bright, flat-topped targets
    bg = np.zeros((size, size))
    for _ in range(2):
        fx, fy = rng.uniform(0.3, 1.2, size=2)
        bg += np.cos(2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
    bg = 0.15 + 0.2 * (bg - bg.min()) / max(np.ptp(bg), 1e-9)
    blobs = np.zeros((size, size))
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        r = rng.uniform(0.08, 0.16)
        d2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (r * r)
        blobs = np.maximum(blobs, np.exp(-0.5 * d2 ** 2))
    ir = bg + (0.92 - bg) * blobs
    mask = blobs > 0.5

    # visible: oriented gratings and step edges, targets dimmed
    tex = np.zeros((size, size))
    for _ in range(2):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(3.0, 6.0)
        tex += np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + rng.uniform(0, 2 * np.pi))
    for _ in range(2):
        theta = rng.uniform(0, 2 * np.pi)
        offset = rng.uniform(-0.2, 0.2)
        tex += 1.2 * (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5) > offset)
    vi = 0.2 + 0.6 * (tex - tex.min()) / max(np.ptp(tex), 1e-9)
    vi = vi * (1.0 - 0.6 * blobs)

    ir_img = GrayImage.from_bytes8(quantize(ir))
    vi_img = GrayImage.from_bytes8(quantize(vi))
    if not ir_img.pixels[mask].mean() > vi_img.pixels[mask].mean():
        raise AssertionError("synthetic pair violates target contrast")
    if not sobel_energy(vi_img.pixels) > sobel_energy(ir_img.pixels):
        raise AssertionError("synthetic pair violates texture contrast")
    return SyntheticPair(ir_img, vi_img, mask)


def generate_synthetic(n: int, size: int, seed: int) -> list[SyntheticPair]:
    return [synth_pair(np.random.default_rng([seed, i]), size) for i in range(n)]


def make_synthetic(out_dir: str | os.PathLike, n: int, size: int, seed: int) -> PairDataset:
    """Write ``n`` pairs to ``out_dir/{ir,vi,masks}/NNNN.pgm``."""
    out = Path(out_dir)
    for sub in ("ir", "vi", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, pair in enumerate(generate_synthetic(n, size, seed)):
        name = f"{i:04d}.pgm"
        save_pgm(pair.ir, out / "ir" / name)
        save_pgm(pair.vi, out / "vi" / name)
        save_pgm(GrayImage(pair.mask.astype(np.float64)), out / "masks" / name)
    return PairDataset.from_dir(out)
