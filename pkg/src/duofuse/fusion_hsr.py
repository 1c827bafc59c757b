"""Feature-based multi-scale fusion head for the sharp low-frame-rate view.

A shared six-layer extractor produces three feature scales per frame; the
warped features and warped frames feed a 3x6 grid network whose rows run at
full, half and quarter resolution with strided-conv connections downward and
bilinear-upsampling connections upward. Lateral blocks are residual pairs of
3x3 convolutions with PReLU; there is no normalization anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .fileio import WeightStore
from .layers import ParamSpec, conv, conv_prelu, conv_specs, init_params, prelu_spec
from .tape import value_of

EXTRACTOR_PREFIX = "fusion_hsr/extractor"
GRID_PREFIX = "fusion_hsr/grid"
DEFAULT_EXTRACTOR_WIDTHS = (16, 32, 64)
DEFAULT_GRID_WIDTHS = (32, 64, 96)
GRID_ROWS = 3
GRID_COLS = 6
NUM_WARPED = 6


@dataclass(frozen=True)
class GridConfig:
    """Fixed 3x6 grid; per-row channel widths and the extractor widths."""

    extractor_widths: tuple = DEFAULT_EXTRACTOR_WIDTHS
    grid_widths: tuple = DEFAULT_GRID_WIDTHS

    @property
    def row_input_channels(self) -> tuple:
        e1, e2, e3 = self.extractor_widths
        return (NUM_WARPED * (3 + e1), NUM_WARPED * e2, NUM_WARPED * e3)


# ---------------------------------------------------------------------------
# feature extractor


def extractor_specs(widths: tuple = DEFAULT_EXTRACTOR_WIDTHS) -> list[ParamSpec]:
    e1, e2, e3 = widths
    plan = [("conv1", 3, e1, 1), ("conv2", e1, e1, 1),
            ("conv3", e1, e2, 2), ("conv4", e2, e2, 1),
            ("conv5", e2, e3, 2), ("conv6", e3, e3, 1)]
    specs: list[ParamSpec] = []
    for name, c_in, c_out, _ in plan:
        specs.extend(conv_specs(f"{EXTRACTOR_PREFIX}/{name}", c_in, c_out))
        specs.extend(prelu_spec(f"{EXTRACTOR_PREFIX}/{name}", c_out))
    return specs


def extract_features(img, params: dict) -> tuple:
    """Three feature scales: strides (1,1), (2,1), (2,1); PReLU after each conv."""
    if value_of(img).shape[-1] != 3:
        raise ValueError("feature extractor expects a 3-channel image")
    p = EXTRACTOR_PREFIX
    s1 = conv_prelu(params, f"{p}/conv2", conv_prelu(params, f"{p}/conv1", img))
    s2 = conv_prelu(params, f"{p}/conv4",
                    conv_prelu(params, f"{p}/conv3", s1, stride=2))
    s3 = conv_prelu(params, f"{p}/conv6",
                    conv_prelu(params, f"{p}/conv5", s2, stride=2))
    return (s1, s2, s3)


# ---------------------------------------------------------------------------
# feature-domain warping

from .warp import (SPLAT_EPS, geometric_mass, splat_normalize,  # noqa: E402
                   splat_sums, warp_bilinear)


def _rescale_displacement(disp: np.ndarray, h: int, w: int) -> np.ndarray:
    """Resize a displacement field and shrink its vectors by the size ratio."""
    full_h, full_w = disp.shape[:2]
    out = np.asarray(ops.resize_bilinear(disp, h, w)).copy()
    out[:, :, 0] *= w / full_w
    if disp.shape[2] > 1:
        out[:, :, 1] *= h / full_h
    return out


def warp_pyramid(levels: tuple, displacement: np.ndarray, kind: str,
                 weight_map: np.ndarray | None = None) -> tuple:
    """Warp every pyramid level by a full-resolution displacement.

    `kind` is "backward" (bilinear sampling) or "forward" (splatting; the
    full-resolution importance map is resized per scale). Returns a tuple of
    (features, mass) pairs; mass is all-ones for backward warps.
    """
    disp = np.asarray(displacement)
    if disp.ndim != 3 or disp.shape[2] not in (1, 2):
        raise ValueError("displacement must be HxWx1 or HxWx2")
    if disp.shape[2] == 1:
        disp = np.concatenate([disp, np.zeros_like(disp)], axis=-1)
    full_h, full_w = value_of(levels[0]).shape[:2]
    if disp.shape[:2] != (full_h, full_w):
        raise ValueError(
            f"displacement {disp.shape[:2]} must match level-0 features ({full_h}, {full_w})")
    out = []
    for lev in levels:
        h, w = value_of(lev).shape[:2]
        flow_s = _rescale_displacement(disp, h, w)
        if kind == "backward":
            warped = warp_bilinear(lev, flow_s)
            mass = np.ones((h, w), dtype=flow_s.dtype)
        elif kind == "forward":
            if weight_map is None:
                wmap = np.ones((h, w), dtype=flow_s.dtype)
            else:
                wmap = np.asarray(ops.resize_bilinear(
                    np.asarray(weight_map)[:, :, None], h, w))[:, :, 0]
            sums = splat_sums(lev, flow_s, wmap)
            live = geometric_mass(flow_s) > SPLAT_EPS
            warped = splat_normalize(sums, SPLAT_EPS, live)
            mass = value_of(sums)[..., -1]
        else:
            raise ValueError(f"unknown warp kind {kind!r}")
        out.append((warped, mass))
    return tuple(out)


# ---------------------------------------------------------------------------
# grid network


def grid_specs(config: GridConfig = GridConfig()) -> list[ParamSpec]:
    specs: list[ParamSpec] = []
    widths = config.grid_widths

    # damping the closing conv of every block at init keeps the residual
    # streams from compounding across the six columns
    def lateral(name, c_in, c_out):
        specs.extend(conv_specs(f"{GRID_PREFIX}/{name}/conv_a", c_in, c_out))
        specs.extend(prelu_spec(f"{GRID_PREFIX}/{name}/conv_a", c_out))
        specs.extend(conv_specs(f"{GRID_PREFIX}/{name}/conv_b", c_out, c_out,
                                init_scale=0.1))
        if c_in != c_out:
            specs.extend(conv_specs(f"{GRID_PREFIX}/{name}/skip", c_in, c_out, k=1))

    def transfer(name, c_in, c_out):
        specs.extend(conv_specs(f"{GRID_PREFIX}/{name}/conv_a", c_in, c_out))
        specs.extend(prelu_spec(f"{GRID_PREFIX}/{name}/conv_a", c_out))
        specs.extend(conv_specs(f"{GRID_PREFIX}/{name}/conv_b", c_out, c_out,
                                init_scale=0.1))

    for row, c_in in enumerate(config.row_input_channels):
        lateral(f"in_r{row}", c_in, widths[row])
    for row in range(GRID_ROWS):
        for col in range(1, GRID_COLS):
            lateral(f"lat_r{row}_c{col}", widths[row], widths[row])
    for col in range(GRID_COLS // 2):
        for row in range(GRID_ROWS - 1):
            transfer(f"down_r{row}_c{col}", widths[row], widths[row + 1])
    for col in range(GRID_COLS // 2, GRID_COLS):
        for row in range(GRID_ROWS - 1):
            transfer(f"up_r{row}_c{col}", widths[row + 1], widths[row])
    specs.extend(conv_specs(f"{GRID_PREFIX}/out", widths[0], 3))
    return specs


def _lateral(params, name, x, c_in, c_out):
    y = conv(params, f"{GRID_PREFIX}/{name}/conv_b",
             conv_prelu(params, f"{GRID_PREFIX}/{name}/conv_a", x))
    skip = x if c_in == c_out else conv(params, f"{GRID_PREFIX}/{name}/skip", x)
    return ops.add(skip, y)


def _down(params, name, x):
    return conv(params, f"{GRID_PREFIX}/{name}/conv_b",
                conv_prelu(params, f"{GRID_PREFIX}/{name}/conv_a", x, stride=2))


def _up(params, name, x, out_h, out_w):
    x = ops.resize_bilinear(x, out_h, out_w)
    return conv(params, f"{GRID_PREFIX}/{name}/conv_b",
                conv_prelu(params, f"{GRID_PREFIX}/{name}/conv_a", x))


def grid_fuse(warped_frames: list, warped_pyramids: list, params: dict,
              config: GridConfig = GridConfig()):
    """Fuse six warped frames and their feature pyramids into one 3-channel raster.

    Row s consumes the concatenation of the six scale-s features; row 0 also
    sees the warped frames themselves. Output is unclamped; clamp to [0, 1]
    at inference.
    """
    if len(warped_frames) != NUM_WARPED or len(warped_pyramids) != NUM_WARPED:
        raise ValueError(f"expected {NUM_WARPED} warped frames and pyramids")
    widths = config.grid_widths
    row_inputs = [
        ops.concat_channels(*warped_frames, *(p[0] for p in warped_pyramids)),
        ops.concat_channels(*(p[1] for p in warped_pyramids)),
        ops.concat_channels(*(p[2] for p in warped_pyramids)),
    ]
    for row, (x, c_in) in enumerate(zip(row_inputs, config.row_input_channels)):
        if value_of(x).shape[-1] != c_in:
            raise ValueError(
                f"grid row {row} expects {c_in} channels, got {value_of(x).shape[-1]}")

    # column 0: per-row input laterals, then downward merges
    cur = [_lateral(params, f"in_r{r}", row_inputs[r], config.row_input_channels[r],
                    widths[r]) for r in range(GRID_ROWS)]
    for r in range(GRID_ROWS - 1):
        cur[r + 1] = ops.add(cur[r + 1], _down(params, f"down_r{r}_c0", cur[r]))

    for col in range(1, GRID_COLS):
        nxt = [_lateral(params, f"lat_r{r}_c{col}", cur[r], widths[r], widths[r])
               for r in range(GRID_ROWS)]
        if col < GRID_COLS // 2:
            for r in range(GRID_ROWS - 1):
                nxt[r + 1] = ops.add(nxt[r + 1], _down(params, f"down_r{r}_c{col}", nxt[r]))
        else:
            for r in reversed(range(GRID_ROWS - 1)):
                h, w = value_of(nxt[r]).shape[:2]
                nxt[r] = ops.add(nxt[r], _up(params, f"up_r{r}_c{col}", nxt[r + 1], h, w))
        cur = nxt
    return conv(params, f"{GRID_PREFIX}/out", cur[0])


def init_weights(rng: np.random.Generator, dtype=np.float64,
                 config: GridConfig = GridConfig()) -> WeightStore:
    specs = extractor_specs(config.extractor_widths) + grid_specs(config)
    return init_params(specs, rng, dtype)


def all_specs(config: GridConfig = GridConfig()) -> list[ParamSpec]:
    return extractor_specs(config.extractor_widths) + grid_specs(config)
