"""Synthetic stereo clips with analytically known flows and disparities.

A smooth additive-sinusoid pattern is sampled under uniform translation, so
the true motion flow is constant (u, v) per frame step and the view disparity
is a constant horizontal offset. Useful for desk-scale training, pipeline
demos and any test that needs exact estimator inputs.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .frame import ClipPair, DisparityMap, FlowField, Frame
from .pipeline import EstimatorInputs, TrainSample


def render_pattern(h: int, w: int, shift_x: float, shift_y: float,
                   dtype=np.float64) -> Frame:
    """Sample the moving test pattern at integer pixel centers."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    x = x - shift_x
    y = y - shift_y
    chans = []
    for phase, (fx, fy) in zip((0.0, 1.3, 2.1),
                               ((0.11, 0.05), (0.06, 0.13), (0.09, 0.09))):
        val = (0.5
               + 0.22 * np.sin(2 * np.pi * (fx * x + fy * y) + phase)
               + 0.18 * np.sin(2 * np.pi * (0.021 * x - 0.017 * y) + 2 * phase)
               + 0.05 * np.cos(2 * np.pi * (0.002 * x * y / max(h, w))))
        chans.append(val)
    data = np.clip(np.stack(chans, axis=-1), 0.0, 1.0)
    return Frame(data.astype(dtype))


def make_sample(hsr_h: int = 32, hsr_w: int = 32, interval: int = 2,
                scale_factor: int = 4, disparity: float = 2.0,
                velocity: tuple[float, float] = (0.8, 0.4),
                dtype=np.float64) -> TrainSample:
    """Build a ClipPair, exact EstimatorInputs and HSTR ground truth.

    The left view at time t shows the pattern shifted by velocity*t; the
    right view is additionally shifted left by the disparity, so backward
    warping it with horizontal flow `disparity` reproduces the left view.
    """
    u, v = velocity
    gt_left, gt_right = [], []
    for t in range(interval + 1):
        gt_left.append(render_pattern(hsr_h, hsr_w, u * t, v * t, dtype))
        gt_right.append(render_pattern(hsr_h, hsr_w, u * t + disparity, v * t, dtype))

    lsr_h, lsr_w = hsr_h // scale_factor, hsr_w // scale_factor
    lsr_frames = [ops.resize_bicubic(f, lsr_h, lsr_w) for f in gt_left]
    clip = ClipPair(lsr_frames=lsr_frames, hsr_start=gt_right[0],
                    hsr_end=gt_right[interval], scale_factor=scale_factor,
                    interval=interval)

    def const_flow(dx, dy):
        f = np.zeros((hsr_h, hsr_w, 2), dtype=dtype)
        f[:, :, 0] = dx
        f[:, :, 1] = dy
        return FlowField(f)

    flows_to_start = {t: const_flow(-u * t, -v * t) for t in range(1, interval + 1)}
    flows_to_end = {t: const_flow(u * (interval - t), v * (interval - t))
                    for t in range(0, interval)}
    est = EstimatorInputs(
        d0=DisparityMap.constant(hsr_h, hsr_w, disparity, dtype),
        d_t_end=DisparityMap.constant(hsr_h, hsr_w, disparity, dtype),
        flows_to_start=flows_to_start,
        flows_to_end=flows_to_end,
        f_r_start_to_end=const_flow(u * interval, v * interval),
        f_r_end_to_start=const_flow(-u * interval, -v * interval),
    )
    return TrainSample(clip=clip, est=est, gt_left=gt_left, gt_right=gt_right)
