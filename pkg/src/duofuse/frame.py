"""Raster domain types: frames, flow fields, disparity maps, clip pairs.

Arrays are (height, width, channels) float, row-major, channel-last. Image
payloads live in [0, 1]; flows and disparities are unbounded reals in pixel
units. All values must be finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float64


def _as_raster(data, channels_allowed=None, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"raster data must be HxWxC, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1:
        raise ValueError(f"raster must be at least 1x1, got {h}x{w}")
    if channels_allowed is not None and c not in channels_allowed:
        raise ValueError(f"expected channels in {sorted(channels_allowed)}, got {c}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError("raster contains non-finite samples")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class Frame:
    """An image raster: 1 (gray), 2 (vector) or 3 (color) channels."""

    data: np.ndarray

    _channels = frozenset({1, 2, 3})

    def __post_init__(self):
        object.__setattr__(self, "data", _as_raster(self.data, self._channels))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def astype(self, dtype) -> "Frame":
        return type(self)(self.data.astype(dtype))

    @classmethod
    def filled(cls, height: int, width: int, channels: int, value: float = 0.0,
               dtype=DEFAULT_DTYPE) -> "Frame":
        return cls(np.full((height, width, channels), value, dtype=dtype))


@dataclass(frozen=True)
class FlowField(Frame):
    """Per-pixel displacement in pixels: channel 0 is dx, channel 1 is dy."""

    _channels = frozenset({2})

    @property
    def dx(self) -> np.ndarray:
        return self.data[:, :, 0]

    @property
    def dy(self) -> np.ndarray:
        return self.data[:, :, 1]

    @classmethod
    def zero(cls, height: int, width: int, dtype=DEFAULT_DTYPE) -> "FlowField":
        return cls(np.zeros((height, width, 2), dtype=dtype))


@dataclass(frozen=True)
class DisparityMap(Frame):
    """Per-pixel horizontal displacement between rectified views, in pixels."""

    _channels = frozenset({1})

    @classmethod
    def constant(cls, height: int, width: int, value: float,
                 dtype=DEFAULT_DTYPE) -> "DisparityMap":
        return cls(np.full((height, width, 1), value, dtype=dtype))


@dataclass(frozen=True)
class ClipPair:
    """One fusion work unit: T+1 coarse fast frames plus the two sharp endpoints.

    ``lsr_frames`` are stored at their native (low) resolution; the pipeline
    upsamples them bicubically before alignment. ``scale_factor`` is the edge
    ratio between the sharp and the coarse stream, ``interval`` the number of
    coarse frame steps between the two sharp endpoints.
    """

    lsr_frames: list[Frame]
    hsr_start: Frame
    hsr_end: Frame
    scale_factor: int
    interval: int

    def __post_init__(self):
        t = self.interval
        if t < 1:
            raise ValueError("interval must be >= 1")
        if len(self.lsr_frames) != t + 1:
            raise ValueError(
                f"expected {t + 1} coarse frames for interval {t}, got {len(self.lsr_frames)}")
        n = self.scale_factor
        if n < 1:
            raise ValueError("scale_factor must be >= 1")
        lh, lw = self.lsr_frames[0].height, self.lsr_frames[0].width
        for f in self.lsr_frames:
            if (f.height, f.width) != (lh, lw):
                raise ValueError("coarse frames disagree on resolution")
        for f in (self.hsr_start, self.hsr_end):
            if (f.height, f.width) != (n * lh, n * lw):
                raise ValueError(
                    f"sharp frames must be {n}x the coarse resolution "
                    f"({n * lh}x{n * lw}), got {f.height}x{f.width}")

    @property
    def hsr_height(self) -> int:
        return self.hsr_start.height

    @property
    def hsr_width(self) -> int:
        return self.hsr_start.width


@dataclass(frozen=True)
class FeaturePyramid:
    """Feature rasters at full, half and quarter scale (spatial dims halve, ceil)."""

    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.levels) != 3:
            raise ValueError("a feature pyramid has exactly 3 levels")
        object.__setattr__(self, "levels", tuple(np.asarray(l) for l in self.levels))
        h, w = self.levels[0].shape[:2]
        for s, lev in enumerate(self.levels[1:], start=1):
            h, w = (h + 1) // 2, (w + 1) // 2
            if lev.shape[:2] != (h, w):
                raise ValueError(
                    f"level {s} must be {h}x{w}, got {lev.shape[0]}x{lev.shape[1]}")


@dataclass
class WarpOutput:
    """A forward-warped image together with its accumulated splat mass.

    Zero mass marks warping holes; the image is 0 there.
    """

    image: Frame
    mass: Frame

    def __post_init__(self):
        if np.any(self.mass.data < 0):
            raise ValueError("splat mass must be nonnegative")


@dataclass(frozen=True)
class DegradeSpec:
    """How to degrade a ground-truth stereo clip into hybrid camera inputs."""

    spatial_factor: int = 4
    temporal_factor: int = 4
    noise_sigma: float = 0.0
    blur_tau: int = 1
    desync_k: int = 0

    def __post_init__(self):
        if self.spatial_factor < 1 or self.temporal_factor < 1:
            raise ValueError("degradation factors must be positive integers")
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise ValueError("noise_sigma must be finite and >= 0")
        if self.blur_tau < 1 or self.blur_tau % 2 == 0:
            raise ValueError("blur_tau must be an odd positive integer")
        if self.desync_k < 0:
            raise ValueError("desync_k must be >= 0")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the training objective terms."""

    lambda_l: float = 1.0
    lambda_r: float = 1.0
    lambda_d: float = 1.0
    lambda_f: float = 1.0
    lambda_s: float = 0.005

    def __post_init__(self):
        for name in ("lambda_l", "lambda_r", "lambda_d", "lambda_f", "lambda_s"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")
