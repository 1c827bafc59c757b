"""Quality metrics, the data-volume/quality frontier, and report emission.

The data-volume model normalizes one full-resolution full-rate view to 0.5,
so a hybrid pair with spatial factor s and temporal factor m carries
0.5/s^2 + 0.5/m of the original payload. The optima curve is the upper
convex hull of (volume, PSNR) points; every measured point lies on or below
it and interpolation between adjacent vertices is linear.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frame import DisparityMap, Frame

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
NEPE_XI = 1e-3


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Frame) else np.asarray(x)


def _check_same_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf for identical inputs."""
    av, bv = _data(a), _data(b)
    _check_same_dims(av, bv)
    mse = float(np.mean((av - bv) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(n) - (n - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    w = np.lib.stride_tricks.sliding_window_view(x, len(k), axis=0)
    x = w @ k
    w = np.lib.stride_tricks.sliding_window_view(x, len(k), axis=1)
    return w @ k


def ssim(a, b) -> float:
    """Structural similarity, canonical constants, per channel then averaged."""
    av, bv = _data(a), _data(b)
    _check_same_dims(av, bv)
    if av.shape[0] < SSIM_WINDOW or av.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    k = _gaussian_kernel()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    vals = []
    for ch in range(av.shape[2]):
        x, y = av[:, :, ch], bv[:, :, ch]
        mx, my = _filter_valid(x, k), _filter_valid(y, k)
        sxx = _filter_valid(x * x, k) - mx * mx
        syy = _filter_valid(y * y, k) - my * my
        sxy = _filter_valid(x * y, k) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def nepe(d_est, d_gt, xi: float = NEPE_XI) -> float:
    """Normalized end-point error of disparity, mean over pixels."""
    if xi <= 0:
        raise ValueError("xi must be positive")
    ev, gv = _data(d_est), _data(d_gt)
    _check_same_dims(ev, gv)
    return float(np.mean(np.abs(ev - gv) / np.abs(gv + xi)))


# ---------------------------------------------------------------------------
# data-volume frontier


def data_volume(spatial_factor: float, temporal_factor: float) -> float:
    """Normalized input payload: 0.5/s^2 + 0.5/m."""
    if spatial_factor < 1 or temporal_factor < 1:
        raise ValueError("factors must be >= 1")
    return 0.5 / (spatial_factor ** 2) + 0.5 / temporal_factor


@dataclass(frozen=True)
class RatePoint:
    """One spatiotemporal combination with its measured output quality."""

    spatial_factor: float
    temporal_factor: float
    psnr_lsr: float
    psnr_hsr: float
    volume: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "volume", data_volume(self.spatial_factor, self.temporal_factor))

    def quality(self, view: str) -> float:
        if view == "lsr":
            return self.psnr_lsr
        if view == "hsr":
            return self.psnr_hsr
        raise ValueError(f"view must be 'lsr' or 'hsr', got {view!r}")


def optima_curve(points: list[RatePoint], view: str) -> list[RatePoint]:
    """Upper convex hull over (volume, PSNR), vertices sorted by volume."""
    if not points:
        raise ValueError("need at least one rate point")
    best: dict[float, RatePoint] = {}
    for p in points:
        cur = best.get(p.volume)
        if cur is None or p.quality(view) > cur.quality(view):
            best[p.volume] = p
    pts = sorted(best.values(), key=lambda p: p.volume)
    if len(pts) <= 2:
        return pts
    hull: list[RatePoint] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1) = hull[-2].volume, hull[-2].quality(view)
            (x2, y2) = hull[-1].volume, hull[-1].quality(view)
            cross = (x2 - x1) * (p.quality(view) - y1) - (y2 - y1) * (p.volume - x1)
            if cross >= 0:  # middle vertex not strictly above the chord
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def curve_value(curve: list[RatePoint], volume: float, view: str) -> float:
    """Linear interpolation along the optima curve."""
    if not curve:
        raise ValueError("empty curve")
    vs = [p.volume for p in curve]
    if not vs[0] <= volume <= vs[-1]:
        raise ValueError(f"volume {volume} outside curve range [{vs[0]}, {vs[-1]}]")
    for a, b in zip(curve, curve[1:]):
        if a.volume <= volume <= b.volume:
            if b.volume == a.volume:
                return max(a.quality(view), b.quality(view))
            w = (volume - a.volume) / (b.volume - a.volume)
            return (1 - w) * a.quality(view) + w * b.quality(view)
    return curve[-1].quality(view)


# ---------------------------------------------------------------------------
# reports


def _format_cell(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.4f}"
    return str(v)


def emit_report(path, rows: list[dict], columns: list[str]) -> Path:
    """CSV with a fixed column order and 4-decimal float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row.get(c, "")) for c in columns])
    return path


def emit_plot_data(path, points: list[tuple]) -> Path:
    """Two-column whitespace-separated text, one point per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for x, y in points:
            f.write(f"{_format_cell(float(x))} {_format_cell(float(y))}\n")
    return path
