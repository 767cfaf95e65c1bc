"""Six no-reference / full-reference fusion metrics and the noise degradation harness.

All metrics work on the 8-bit quantized image (values 0..255 as float64), the
scale on which fusion scores are conventionally reported.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hafuse.autodiff import sobel_xy
from hafuse.data import GrayImage, quantize
from hafuse.errors import ConfigError, DimensionError

METRIC_COLUMNS = ("image_id", "en", "ag", "sf", "fmi", "vif", "uiqi")


def _u8(img) -> np.ndarray:
    pixels = img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    if pixels.ndim != 2:
        raise DimensionError(f"metrics take 2-D images, got shape {pixels.shape}")
    return quantize(pixels).astype(np.float64)


def _entropy_from_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p))) + 0.0


def metric_en(img) -> float:
    """Shannon entropy (bits) of the 256-bin gray-level histogram."""
    q = _u8(img).astype(np.int64)
    return _entropy_from_counts(np.bincount(q.ravel(), minlength=256))


def metric_ag(img) -> float:
    """Mean of sqrt((dx^2 + dy^2) / 2) over pixels with both forward differences."""
    q = _u8(img)
    if min(q.shape) < 2:
        return 0.0
    dx = q[:-1, 1:] - q[:-1, :-1]
    dy = q[1:, :-1] - q[:-1, :-1]
    return float(np.mean(np.sqrt((dx * dx + dy * dy) / 2.0)))


def metric_sf(img) -> float:
    """sqrt(RF^2 + CF^2) from RMS horizontal (row) and vertical (column) differences."""
    q = _u8(img)
    rf2 = np.mean((q[:, 1:] - q[:, :-1]) ** 2) if q.shape[1] > 1 else 0.0
    cf2 = np.mean((q[1:, :] - q[:-1, :]) ** 2) if q.shape[0] > 1 else 0.0
    return float(np.sqrt(rf2 + cf2))


# --------------------------------------------------------------------------
# UIQI


def quality_index(x: np.ndarray, y: np.ndarray, window: int = 8) -> float:
    """Mean Wang-Bovik Q over all ``window``-square sliding windows.

    Windows whose denominator vanishes are skipped; if every window is skipped
    the images are treated as identical and 1 is returned.
    """
    if x.shape != y.shape:
        raise DimensionError(f"quality_index: shapes differ {x.shape} vs {y.shape}")
    w = min(window, *x.shape)
    wx = sliding_window_view(x, (w, w))
    wy = sliding_window_view(y, (w, w))
    mx = wx.mean(axis=(-1, -2))
    my = wy.mean(axis=(-1, -2))
    dx = wx - mx[..., None, None]
    dy = wy - my[..., None, None]
    vx = (dx * dx).mean(axis=(-1, -2))
    vy = (dy * dy).mean(axis=(-1, -2))
    cxy = (dx * dy).mean(axis=(-1, -2))
    den = (vx + vy) * (mx * mx + my * my)
    ok = den > 1e-12
    if not ok.any():
        return 1.0
    q = 4.0 * cxy[ok] * mx[ok] * my[ok] / den[ok]
    return float(q.mean())


def metric_uiqi(fused, src_a, src_b) -> float:
    f = _u8(fused)
    return 0.5 * (quality_index(f, _u8(src_a)) + quality_index(f, _u8(src_b)))


# --------------------------------------------------------------------------
# FMI


def _bin64(feat: np.ndarray, bins: int = 64) -> np.ndarray:
    lo, hi = feat.min(), feat.max()
    if hi <= lo:
        return np.zeros(feat.shape, dtype=np.int64)
    idx = np.floor((feat - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def feature_mutual_information(f: np.ndarray, x: np.ndarray, bins: int = 64) -> float:
    """2 I(F;X) / (H(F) + H(X)) on binned Sobel-magnitude feature maps."""
    ff, fx = (np.hypot(*sobel_xy(a)) for a in (f, x))
    bf, bx = _bin64(ff, bins).ravel(), _bin64(fx, bins).ravel()
    h_f = _entropy_from_counts(np.bincount(bf, minlength=bins))
    h_x = _entropy_from_counts(np.bincount(bx, minlength=bins))
    if h_f + h_x == 0:
        return 1.0
    h_joint = _entropy_from_counts(np.bincount(bf * bins + bx, minlength=bins * bins))
    mi = h_f + h_x - h_joint
    return float(min(max(2.0 * mi / (h_f + h_x), 0.0), 1.0))


def metric_fmi(fused, src_a, src_b) -> float:
    f = _u8(fused)
    return 0.5 * (feature_mutual_information(f, _u8(src_a)) + feature_mutual_information(f, _u8(src_b)))


# --------------------------------------------------------------------------
# VIF


def _box3(a: np.ndarray) -> np.ndarray:
    return sliding_window_view(a, (3, 3)).mean(axis=(-1, -2))


def _pyr_down(a: np.ndarray) -> np.ndarray:
    k = np.array([0.25, 0.5, 0.25])
    p = np.pad(a, 1, mode="reflect")
    rows = k[0] * p[:-2] + k[1] * p[1:-1] + k[2] * p[2:]
    blurred = k[0] * rows[:, :-2] + k[1] * rows[:, 1:-1] + k[2] * rows[:, 2:]
    return blurred[::2, ::2]


def visual_information_fidelity(ref: np.ndarray, dist: np.ndarray, scales: int = 4,
                                noise_var: float = 2.0) -> float:
    """Pixel-domain VIF of ``dist`` against ``ref`` over a Gaussian pyramid.

    Local statistics use 3x3 windows. A source with no local variance at any
    scale gives an empty denominator; that case is reported as 1.
    """
    if ref.shape != dist.shape:
        raise DimensionError(f"VIF: shapes differ {ref.shape} vs {dist.shape}")
    tiny = 1e-10
    num = den = 0.0
    r, d = ref, dist
    for s in range(scales):
        if s > 0:
            r, d = _pyr_down(r), _pyr_down(d)
        if min(r.shape) < 3:
            break
        mr, md = _box3(r), _box3(d)
        var_r = np.maximum(_box3(r * r) - mr * mr, 0.0)
        var_d = np.maximum(_box3(d * d) - md * md, 0.0)
        cov = _box3(r * d) - mr * md

        flat_r = var_r < tiny
        g = np.where(flat_r, 0.0, cov / np.where(flat_r, 1.0, var_r))
        sv = var_d - g * cov
        var_r = np.where(flat_r, 0.0, var_r)
        sv = np.where(flat_r, var_d, sv)
        flat_d = var_d < tiny
        g = np.where(flat_d, 0.0, g)
        sv = np.where(flat_d, 0.0, sv)
        neg = g < 0
        sv = np.where(neg, var_d, sv)
        g = np.where(neg, 0.0, g)
        sv = np.maximum(sv, 0.0)

        num += float(np.sum(np.log2(1.0 + g * g * var_r / (sv + noise_var))))
        den += float(np.sum(np.log2(1.0 + var_r / noise_var)))
    return 1.0 if den == 0 else num / den


def metric_vif(fused, src_a, src_b) -> float:
    f = _u8(fused)
    return 0.5 * (visual_information_fidelity(_u8(src_a), f) + visual_information_fidelity(_u8(src_b), f))


# --------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseSpec:
    variance: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise ConfigError(f"noise variance must be >= 0, got {self.variance}")


def add_gaussian_noise(img: GrayImage, spec: NoiseSpec) -> GrayImage:
    """Add N(0, variance) per pixel (Box-Muller on a seeded generator), clamp to [0, 1]."""
    if spec.variance == 0:
        return GrayImage(img.pixels.copy())
    n = img.pixels.size
    m = (n + 1) // 2
    rng = np.random.default_rng(spec.seed)
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
    noisy = img.pixels + np.sqrt(spec.variance) * z.reshape(img.pixels.shape)
    return GrayImage(np.clip(noisy, 0.0, 1.0))


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class MetricReport:
    en: float
    ag: float
    sf: float
    fmi: float
    vif: float
    uiqi: float

    @classmethod
    def mean(cls, reports: list["MetricReport"]) -> "MetricReport":
        if not reports:
            raise ConfigError("cannot average an empty list of reports")
        return cls(**{f.name: float(np.mean([getattr(r, f.name) for r in reports])) for f in fields(cls)})


def evaluate_pair(fused, I_ir, I_vi) -> MetricReport:
    return MetricReport(
        en=metric_en(fused),
        ag=metric_ag(fused),
        sf=metric_sf(fused),
        fmi=metric_fmi(fused, I_ir, I_vi),
        vif=metric_vif(fused, I_ir, I_vi),
        uiqi=metric_uiqi(fused, I_ir, I_vi),
    )


def metrics_csv(rows: list[tuple[str, MetricReport]], mean_label: str = "mean") -> str:
    """CSV text with one row per image and a trailing mean row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for image_id, rep in rows:
        writer.writerow([image_id] + [repr(v) for v in asdict(rep).values()])
    if rows:
        writer.writerow([mean_label] + [repr(v) for v in asdict(MetricReport.mean([r for _, r in rows])).values()])
    return buf.getvalue()
