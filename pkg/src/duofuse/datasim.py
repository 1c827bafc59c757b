"""Hybrid-camera input simulation from high-spatiotemporal-resolution clips.

Given a ground-truth stereo clip, produce the two degraded camera streams:
the left view spatially downscaled at every timestamp (optionally noisy,
optionally desynchronized) and the right view temporally subsampled
(optionally motion-blurred by window averaging). Also: clip extraction,
zoom compensation for heterogeneous real rigs, and training augmentations
that keep frames, flows and disparities sign-consistent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ops
from .frame import ClipPair, DegradeSpec, DisparityMap, FlowField, Frame
from .pipeline import EstimatorInputs, TrainSample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ZoomSpec:
    """Focal-ratio upscale plus center crop homogenizing a stereo pair."""

    focal_ratio: float
    crop_h: int
    crop_w: int

    def __post_init__(self):
        if self.focal_ratio < 1.0:
            raise ValueError("focal_ratio must be >= 1")
        if self.crop_h < 1 or self.crop_w < 1:
            raise ValueError("crop size must be positive")


@dataclass
class HybridStreams:
    """Simulated camera outputs: per-timestamp coarse frames, sampled sharp frames."""

    lsr_frames: list[Frame]
    hsr_frames: list[Frame]
    hsr_indices: list[int]
    spec: DegradeSpec

    @property
    def num_intervals(self) -> int:
        return len(self.hsr_frames) - 1

    def clip_pair(self, k: int = 0) -> ClipPair:
        """The k-th interval as a fusion work unit."""
        if not 0 <= k < self.num_intervals:
            raise ValueError(f"interval {k} out of range (have {self.num_intervals})")
        m = self.spec.temporal_factor
        lo, hi = self.hsr_indices[k], self.hsr_indices[k + 1]
        return ClipPair(
            lsr_frames=self.lsr_frames[lo:hi + 1],
            hsr_start=self.hsr_frames[k],
            hsr_end=self.hsr_frames[k + 1],
            scale_factor=self.spec.spatial_factor,
            interval=m)


def degrade(gt_left: list[Frame], gt_right: list[Frame], spec: DegradeSpec,
            seed: int = 0) -> tuple[HybridStreams, tuple[list[Frame], list[Frame]]]:
    """Degrade a ground-truth stereo clip into hybrid camera streams.

    Returns the streams and the ground truth trimmed to the usable timeline
    (desynchronization consumes `desync_k` frames from the left tail).
    """
    if len(gt_left) != len(gt_right):
        raise ValueError("views must have the same number of frames")
    shapes = {(f.height, f.width) for f in gt_left + gt_right}
    if len(shapes) != 1:
        raise ValueError("all ground-truth frames must share one resolution")
    s, m, k = spec.spatial_factor, spec.temporal_factor, spec.desync_k
    n = len(gt_left) - k
    if n < m + 1:
        raise ValueError(
            f"clip too short: {len(gt_left)} frames minus desync {k} leaves {n}, "
            f"need at least {m + 1} for temporal factor {m}")
    h, w = gt_left[0].height, gt_left[0].width
    if h % s or w % s:
        raise ValueError(f"resolution {h}x{w} not divisible by spatial factor {s}")

    rng = np.random.default_rng(seed)
    lsr = []
    for i in range(n):
        small = ops.resize_bicubic(gt_left[i + k], h // s, w // s)
        if spec.noise_sigma > 0:
            noisy = small.data + rng.normal(0.0, spec.noise_sigma / 255.0,
                                            size=small.data.shape)
            small = Frame(np.clip(noisy, 0.0, 1.0))
        lsr.append(small)

    half = spec.blur_tau // 2
    hsr_indices = list(range(0, n, m))
    hsr = []
    for i in hsr_indices:
        if spec.blur_tau == 1:
            hsr.append(gt_right[i])
        else:
            lo, hi = max(0, i - half), min(n - 1, i + half)
            stack = np.stack([gt_right[j].data for j in range(lo, hi + 1)])
            hsr.append(Frame(stack.mean(axis=0)))

    streams = HybridStreams(lsr_frames=lsr, hsr_frames=hsr,
                            hsr_indices=hsr_indices, spec=spec)
    return streams, (gt_left[:n], gt_right[:n])


def extract_clips(frames: list, clip_len: int, stride: int | None = None,
                  seed: int | None = None, count: int | None = None) -> list[list]:
    """Cut a frame list into clips of `clip_len`.

    Sequential windows every `stride` frames by default; with a seed, `count`
    reproducibly random windows instead.
    """
    if clip_len < 1:
        raise ValueError("clip_len must be positive")
    n_starts = len(frames) - clip_len + 1
    if n_starts < 1:
        log.warning("requested clips of %d frames but only %d available",
                    clip_len, len(frames))
        return []
    if seed is None:
        stride = stride or clip_len
        starts = range(0, n_starts, stride)
    else:
        rng = np.random.default_rng(seed)
        count = count if count is not None else max(1, n_starts // clip_len)
        starts = sorted(int(x) for x in rng.integers(0, n_starts, size=count))
    return [list(frames[s:s + clip_len]) for s in starts]


def zoom_compensate(lsr_img: Frame, spec: ZoomSpec) -> Frame:
    """Upscale by the focal ratio and crop the center patch.

    Odd margins leave the extra pixel on the bottom/right (top/left-biased
    crop origin).
    """
    up_h = int(round(lsr_img.height * spec.focal_ratio))
    up_w = int(round(lsr_img.width * spec.focal_ratio))
    if up_h < spec.crop_h or up_w < spec.crop_w:
        raise ValueError(
            f"upscaled size {up_h}x{up_w} smaller than crop {spec.crop_h}x{spec.crop_w}")
    up = lsr_img if (up_h, up_w) == (lsr_img.height, lsr_img.width) \
        else ops.resize_bicubic(lsr_img, up_h, up_w)
    top = (up_h - spec.crop_h) // 2
    left = (up_w - spec.crop_w) // 2
    return Frame(up.data[top:top + spec.crop_h, left:left + spec.crop_w])


# ---------------------------------------------------------------------------
# augmentation


def _flip_frame_h(f: Frame) -> Frame:
    return type(f)(np.ascontiguousarray(f.data[:, ::-1]))


def _flip_frame_v(f: Frame) -> Frame:
    return type(f)(np.ascontiguousarray(f.data[::-1]))


def hflip_flow(f: FlowField) -> FlowField:
    data = f.data[:, ::-1].copy()
    data[:, :, 0] = -data[:, :, 0]
    return FlowField(data)


def vflip_flow(f: FlowField) -> FlowField:
    data = f.data[::-1].copy()
    data[:, :, 1] = -data[:, :, 1]
    return FlowField(data)


def hflip_disparity(d: DisparityMap) -> DisparityMap:
    return DisparityMap(-d.data[:, ::-1])


def hflip_sample(s: TrainSample) -> TrainSample:
    clip = ClipPair(
        lsr_frames=[_flip_frame_h(f) for f in s.clip.lsr_frames],
        hsr_start=_flip_frame_h(s.clip.hsr_start),
        hsr_end=_flip_frame_h(s.clip.hsr_end),
        scale_factor=s.clip.scale_factor, interval=s.clip.interval)
    est = EstimatorInputs(
        d0=hflip_disparity(s.est.d0),
        d_t_end=hflip_disparity(s.est.d_t_end),
        flows_to_start={t: hflip_flow(f) for t, f in s.est.flows_to_start.items()},
        flows_to_end={t: hflip_flow(f) for t, f in s.est.flows_to_end.items()},
        f_r_start_to_end=hflip_flow(s.est.f_r_start_to_end),
        f_r_end_to_start=hflip_flow(s.est.f_r_end_to_start))
    return TrainSample(clip=clip, est=est,
                       gt_left=[_flip_frame_h(f) for f in s.gt_left],
                       gt_right=[_flip_frame_h(f) for f in s.gt_right])


def vflip_sample(s: TrainSample) -> TrainSample:
    clip = ClipPair(
        lsr_frames=[_flip_frame_v(f) for f in s.clip.lsr_frames],
        hsr_start=_flip_frame_v(s.clip.hsr_start),
        hsr_end=_flip_frame_v(s.clip.hsr_end),
        scale_factor=s.clip.scale_factor, interval=s.clip.interval)
    est = EstimatorInputs(
        d0=DisparityMap(s.est.d0.data[::-1].copy()),
        d_t_end=DisparityMap(s.est.d_t_end.data[::-1].copy()),
        flows_to_start={t: vflip_flow(f) for t, f in s.est.flows_to_start.items()},
        flows_to_end={t: vflip_flow(f) for t, f in s.est.flows_to_end.items()},
        f_r_start_to_end=vflip_flow(s.est.f_r_start_to_end),
        f_r_end_to_start=vflip_flow(s.est.f_r_end_to_start))
    return TrainSample(clip=clip, est=est,
                       gt_left=[_flip_frame_v(f) for f in s.gt_left],
                       gt_right=[_flip_frame_v(f) for f in s.gt_right])


def treverse_sample(s: TrainSample) -> TrainSample:
    """Reverse temporal order: endpoint roles swap, flow directions relabel."""
    big_t = s.clip.interval
    clip = ClipPair(
        lsr_frames=list(reversed(s.clip.lsr_frames)),
        hsr_start=s.clip.hsr_end, hsr_end=s.clip.hsr_start,
        scale_factor=s.clip.scale_factor, interval=big_t)
    est = EstimatorInputs(
        d0=s.est.d_t_end, d_t_end=s.est.d0,
        flows_to_start={big_t - t: f for t, f in s.est.flows_to_end.items()},
        flows_to_end={big_t - t: f for t, f in s.est.flows_to_start.items()},
        f_r_start_to_end=s.est.f_r_end_to_start,
        f_r_end_to_start=s.est.f_r_start_to_end)
    return TrainSample(clip=clip, est=est,
                       gt_left=list(reversed(s.gt_left)),
                       gt_right=list(reversed(s.gt_right)))


def color_jitter_sample(s: TrainSample, rng: np.random.Generator) -> TrainSample:
    """Per-channel gain in [0.9, 1.1] and offset in [-0.02, 0.02], clamped."""
    gain = rng.uniform(0.9, 1.1, size=3)
    offset = rng.uniform(-0.02, 0.02, size=3)

    def jit(f: Frame) -> Frame:
        return Frame(np.clip(f.data * gain + offset, 0.0, 1.0))

    clip = ClipPair(
        lsr_frames=[jit(f) for f in s.clip.lsr_frames],
        hsr_start=jit(s.clip.hsr_start), hsr_end=jit(s.clip.hsr_end),
        scale_factor=s.clip.scale_factor, interval=s.clip.interval)
    return TrainSample(clip=clip, est=s.est,
                       gt_left=[jit(f) for f in s.gt_left],
                       gt_right=[jit(f) for f in s.gt_right])


def augment(sample: TrainSample, seed: int) -> TrainSample:
    """Random flip/reverse/jitter combination, deterministic per seed."""
    rng = np.random.default_rng(seed)
    out = sample
    if rng.random() < 0.5:
        out = hflip_sample(out)
    if rng.random() < 0.5:
        out = vflip_sample(out)
    if rng.random() < 0.5:
        out = treverse_sample(out)
    if rng.random() < 0.5:
        out = color_jitter_sample(out, rng)
    return out
