"""End-to-end orchestration: alignment, both fusion heads, losses, training.

A clip is processed one timestamp at a time. Alignment composes the warp
operators into the full candidate set for that timestamp; the two fusion
heads then produce the fast-view and sharp-view outputs. Sharp-view outputs
at the captured endpoints are the captured frames, passed through untouched.

Training optimizes both fusion heads only (disparity and flow estimates are
file inputs here); the warping and smoothness objectives are still computed
as diagnostics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fusion_hsr, fusion_lsr, ops
from .fileio import WeightStore
from .frame import ClipPair, DisparityMap, FlowField, Frame, LossWeights, WarpOutput
from .layers import bind, validate_store
from .tape import Node, backward, value_of
from .warp import (BrightnessConstancy, DisparityMagnitude, backward_warp,
                   cascaded_warp, disparity_to_flow, forward_splat,
                   propagate_disparity, scale_flow, splat_weights, transfer_flow,
                   warp_bilinear)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class FusionConfig:
    """Widths and warp parameters shared by inference and training."""

    unet_widths: tuple = fusion_lsr.DEFAULT_WIDTHS
    extractor_widths: tuple = fusion_hsr.DEFAULT_EXTRACTOR_WIDTHS
    grid_widths: tuple = fusion_hsr.DEFAULT_GRID_WIDTHS
    splat_alpha: float = 0.1
    splat_beta: float = 10.0
    dtype: str = "float64"

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def grid_config(self) -> fusion_hsr.GridConfig:
        return fusion_hsr.GridConfig(self.extractor_widths, self.grid_widths)

    def all_specs(self):
        return fusion_lsr.param_specs(self.unet_widths) + fusion_hsr.all_specs(self.grid_config)


def init_fusion_weights(seed: int, config: FusionConfig = FusionConfig()) -> WeightStore:
    rng = np.random.default_rng(seed)
    store = fusion_lsr.init_weights(rng, config.np_dtype, config.unet_widths)
    for name, arr in fusion_hsr.init_weights(rng, config.np_dtype,
                                             config.grid_config).items():
        store[name] = arr
    return store


@dataclass(frozen=True)
class EstimatorInputs:
    """Disparity and flow estimates loaded from files, all at sharp resolution.

    Motion flows are indexed by timestamp; the two degenerate self-flows
    (time 0 to itself, time T to itself) are synthesized as zero and need no
    files.
    """

    d0: DisparityMap
    d_t_end: DisparityMap
    flows_to_start: dict[int, FlowField]
    flows_to_end: dict[int, FlowField]
    f_r_start_to_end: FlowField
    f_r_end_to_start: FlowField

    def flow_to_start(self, t: int) -> FlowField:
        if t == 0:
            return FlowField.zero(self.d0.height, self.d0.width)
        return self.flows_to_start[t]

    def flow_to_end(self, t: int, interval: int) -> FlowField:
        if t == interval:
            return FlowField.zero(self.d0.height, self.d0.width)
        return self.flows_to_end[t]

    def validate_against(self, clip: ClipPair) -> None:
        h, w = clip.hsr_height, clip.hsr_width
        rasters = [self.d0, self.d_t_end, self.f_r_start_to_end, self.f_r_end_to_start,
                   *self.flows_to_start.values(), *self.flows_to_end.values()]
        for r in rasters:
            if (r.height, r.width) != (h, w):
                raise ValueError(
                    f"estimator raster {r.height}x{r.width} does not match sharp grid {h}x{w}")
        for t in range(1, clip.interval):
            if t not in self.flows_to_start or t not in self.flows_to_end:
                raise ValueError(f"missing motion flow for interior timestamp {t}")
        if 0 not in self.flows_to_end:
            raise ValueError("missing motion flow from timestamp 0 to the end frame")
        if clip.interval not in self.flows_to_start:
            raise ValueError("missing motion flow from the end timestamp to 0")


@dataclass
class AlignmentBundle:
    """Every warped candidate and guidance field for one timestamp."""

    t: int
    interval: int
    l_hat: Frame
    l1: Frame
    l2: Frame
    r1: WarpOutput
    r2: WarpOutput
    r3: Frame
    r4: Frame
    r5: WarpOutput
    r6: WarpOutput
    d1: DisparityMap
    d2: DisparityMap
    f_to_start: FlowField
    f_to_end: FlowField
    f_0t: FlowField
    f_tend: FlowField
    transfer_to_start: WarpOutput
    transfer_to_end: WarpOutput
    wmap_r1: np.ndarray
    wmap_r2: np.ndarray
    wmap_r5: np.ndarray
    wmap_r6: np.ndarray

    def warped_hsr_frames(self) -> list:
        return [self.r1.image, self.r2.image, self.r3, self.r4,
                self.r5.image, self.r6.image]


def upsampled_lhat(clip: ClipPair) -> list[Frame]:
    """The coarse frames carried to sharp resolution by bicubic upscaling."""
    if clip.scale_factor == 1:
        return list(clip.lsr_frames)
    h, w = clip.hsr_height, clip.hsr_width
    return [ops.resize_bicubic(f, h, w) for f in clip.lsr_frames]


def align(clip: ClipPair, est: EstimatorInputs, t: int,
          config: FusionConfig = FusionConfig(),
          l_hat_frames: list[Frame] | None = None) -> AlignmentBundle:
    """Compose all warp operators into the candidate set for timestamp t."""
    if not 0 <= t <= clip.interval:
        raise ValueError(f"timestamp {t} outside [0, {clip.interval}]")
    est.validate_against(clip)
    l_hat_frames = l_hat_frames or upsampled_lhat(clip)
    l_hat = l_hat_frames[t]
    r0, r_end = clip.hsr_start, clip.hsr_end
    big_t = clip.interval

    f_t0 = est.flow_to_start(t)
    f_te = est.flow_to_end(t, big_t)

    l1 = cascaded_warp(r0, est.d0, f_t0)
    l2 = cascaded_warp(r_end, est.d_t_end, f_te)
    d1 = propagate_disparity(est.d0, f_t0)
    d2 = propagate_disparity(est.d_t_end, f_te)

    tau = t / big_t
    f_0t = scale_flow(est.f_r_start_to_end, tau)
    f_tend = scale_flow(est.f_r_end_to_start, 1.0 - tau)
    bc1 = BrightnessConstancy(r0, r_end, config.splat_beta)
    bc2 = BrightnessConstancy(r_end, r0, config.splat_beta)
    r1 = forward_splat(r0, f_0t, bc1)
    r2 = forward_splat(r_end, f_tend, bc2)

    dmode = DisparityMagnitude(config.splat_alpha)
    transfer_to_start = transfer_flow(f_t0, d1, dmode)
    transfer_to_end = transfer_flow(f_te, d2, dmode)
    r3 = backward_warp(r0, FlowField(transfer_to_start.image.data))
    r4 = backward_warp(r_end, FlowField(transfer_to_end.image.data))

    r5 = forward_splat(l_hat, disparity_to_flow(d1), dmode)
    r6 = forward_splat(l_hat, disparity_to_flow(d2), dmode)

    return AlignmentBundle(
        t=t, interval=big_t, l_hat=l_hat, l1=l1, l2=l2,
        r1=r1, r2=r2, r3=r3, r4=r4, r5=r5, r6=r6,
        d1=d1, d2=d2, f_to_start=f_t0, f_to_end=f_te, f_0t=f_0t, f_tend=f_tend,
        transfer_to_start=transfer_to_start, transfer_to_end=transfer_to_end,
        wmap_r1=np.asarray(value_of(splat_weights(bc1, f_0t.data))),
        wmap_r2=np.asarray(value_of(splat_weights(bc2, f_tend.data))),
        wmap_r5=np.exp(config.splat_alpha * d1.data[:, :, 0]),
        wmap_r6=np.exp(config.splat_alpha * d2.data[:, :, 0]),
    )


# ---------------------------------------------------------------------------
# reconstruction


def _cast(arr, dtype):
    return np.asarray(arr).astype(dtype, copy=False)


def reconstruct_lsr(bundle: AlignmentBundle, params: dict,
                    config: FusionConfig = FusionConfig()):
    """Fast-view output for one timestamp (unclamped array or Node)."""
    dt = config.np_dtype
    return fusion_lsr.reconstruct(
        _cast(bundle.l_hat.data, dt), _cast(bundle.l1.data, dt), _cast(bundle.l2.data, dt),
        _cast(bundle.d1.data, dt), _cast(bundle.d2.data, dt),
        _cast(bundle.f_to_start.data, dt), _cast(bundle.f_to_end.data, dt), params)


def reconstruct_hsr(bundle: AlignmentBundle, pyramids: dict, params: dict,
                    config: FusionConfig = FusionConfig()):
    """Sharp-view output for one interior timestamp (unclamped array or Node).

    `pyramids` maps "r0", "r_end", "l_hat" to extractor outputs at that
    timestamp; features are warped here so gradients reach the extractor.
    """
    dt = config.np_dtype
    warped_pyrs = [
        fusion_hsr.warp_pyramid(pyramids["r0"], _cast(bundle.f_0t.data, dt),
                                "forward", _cast(bundle.wmap_r1, dt)),
        fusion_hsr.warp_pyramid(pyramids["r_end"], _cast(bundle.f_tend.data, dt),
                                "forward", _cast(bundle.wmap_r2, dt)),
        fusion_hsr.warp_pyramid(pyramids["r0"],
                                _cast(bundle.transfer_to_start.image.data, dt), "backward"),
        fusion_hsr.warp_pyramid(pyramids["r_end"],
                                _cast(bundle.transfer_to_end.image.data, dt), "backward"),
        fusion_hsr.warp_pyramid(pyramids["l_hat"], _cast(bundle.d1.data, dt),
                                "forward", _cast(bundle.wmap_r5, dt)),
        fusion_hsr.warp_pyramid(pyramids["l_hat"], _cast(bundle.d2.data, dt),
                                "forward", _cast(bundle.wmap_r6, dt)),
    ]
    frames = [_cast(f.data, dt) for f in bundle.warped_hsr_frames()]
    features_only = [tuple(level for level, _ in pyr) for pyr in warped_pyrs]
    return fusion_hsr.grid_fuse(frames, features_only, params, config.grid_config)


def extract_pyramids(bundle: AlignmentBundle, clip: ClipPair, params: dict,
                     config: FusionConfig = FusionConfig()) -> dict:
    dt = config.np_dtype
    return {
        "r0": fusion_hsr.extract_features(_cast(clip.hsr_start.data, dt), params),
        "r_end": fusion_hsr.extract_features(_cast(clip.hsr_end.data, dt), params),
        "l_hat": fusion_hsr.extract_features(_cast(bundle.l_hat.data, dt), params),
    }


def fuse_clip(clip: ClipPair, est: EstimatorInputs, store: WeightStore,
              config: FusionConfig = FusionConfig(),
              clamp: bool = True) -> tuple[list[Frame], list[Frame]]:
    """Reconstruct both views at every timestamp of the clip.

    Sharp-view endpoints are the captured frames passed through unchanged.
    """
    specs_l = fusion_lsr.param_specs(config.unet_widths)
    specs_h = fusion_hsr.all_specs(config.grid_config)
    store = store.astype(config.np_dtype)
    params_l = bind(store, specs_l)
    params_h = bind(store, specs_h)
    l_hat_frames = upsampled_lhat(clip)
    l_out, r_out = [], []
    for t in range(clip.interval + 1):
        bundle = align(clip, est, t, config, l_hat_frames)
        pred_l = value_of(reconstruct_lsr(bundle, params_l, config))
        l_out.append(Frame(ops.clamp01(pred_l) if clamp else pred_l))
        if t == 0:
            r_out.append(clip.hsr_start)
        elif t == clip.interval:
            r_out.append(clip.hsr_end)
        else:
            pyramids = extract_pyramids(bundle, clip, params_h, config)
            pred_r = value_of(reconstruct_hsr(bundle, pyramids, params_h, config))
            r_out.append(Frame(ops.clamp01(pred_r) if clamp else pred_r))
    return l_out, r_out


# ---------------------------------------------------------------------------
# losses


def loss_reconstruction(pred, gt):
    """Pixel-wise L1, mean-reduced over pixels and channels."""
    p = pred.data if isinstance(pred, Frame) else pred
    g = gt.data if isinstance(gt, Frame) else gt
    return ops.mean_abs_diff(p, g)


def loss_warp_disp(clip: ClipPair, est: EstimatorInputs,
                   l_hat_frames: list[Frame] | None = None) -> float:
    """Photometric agreement of the endpoint disparities (diagnostic)."""
    l_hat_frames = l_hat_frames or upsampled_lhat(clip)
    a = backward_warp(clip.hsr_start, disparity_to_flow(est.d0))
    b = backward_warp(clip.hsr_end, disparity_to_flow(est.d_t_end))
    return float(value_of(loss_reconstruction(l_hat_frames[0], a))
                 + value_of(loss_reconstruction(l_hat_frames[-1], b)))


def loss_warp_flow(bundle: AlignmentBundle, gt_l: Frame) -> float:
    """Photometric agreement of the two cascaded warps with the true frame."""
    return float(value_of(loss_reconstruction(gt_l, bundle.l1))
                 + value_of(loss_reconstruction(gt_l, bundle.l2)))


def total_variation(d: DisparityMap | np.ndarray) -> float:
    """Mean forward-difference magnitude, zero along the last row and column."""
    arr = d.data if isinstance(d, Frame) else np.asarray(d)
    gx = np.zeros_like(arr)
    gy = np.zeros_like(arr)
    gx[:, :-1] = arr[:, 1:] - arr[:, :-1]
    gy[:-1, :] = arr[1:, :] - arr[:-1, :]
    return float(np.mean(np.abs(gx)) + np.mean(np.abs(gy)))


def loss_smooth(d0: DisparityMap, d_t_end: DisparityMap) -> float:
    return total_variation(d0) + total_variation(d_t_end)


def loss_total(parts: dict, weights: LossWeights):
    """Weighted sum of the loss parts; missing parts count as zero."""
    lam = {"l": weights.lambda_l, "r": weights.lambda_r, "d": weights.lambda_d,
           "f": weights.lambda_f, "s": weights.lambda_s}
    unknown = set(parts) - set(lam)
    if unknown:
        raise ValueError(f"unknown loss parts {sorted(unknown)}")
    plain = sum(lam[k] * float(value_of(p)) for k, p in parts.items()
                if not isinstance(p, Node))
    total = plain
    for key, part in parts.items():
        if isinstance(part, Node):
            total = ops.add(ops.scale(part, lam[key]), total)
    return total


# ---------------------------------------------------------------------------
# optimizer and trainer


class Adam:
    """Adam with bias correction; state keyed by parameter name."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name in sorted(arrays):
            g = grads.get(name)
            if g is None:
                continue
            if name not in self._m:
                self._m[name] = np.zeros_like(g)
                self._v[name] = np.zeros_like(g)
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            arrays[name] = arrays[name] - update.astype(arrays[name].dtype)


@dataclass
class TrainSample:
    """One training unit: inputs plus ground truth at sharp resolution."""

    clip: ClipPair
    est: EstimatorInputs
    gt_left: list[Frame]
    gt_right: list[Frame]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 1e-4
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    log_every: int = 50


def train_fusion(dataset: list[TrainSample], config: TrainConfig = TrainConfig(),
                 store: WeightStore | None = None):
    """Train both fusion heads on reconstruction losses; returns (store, history).

    Deterministic given the seed. Alignment is precomputed per (clip,
    timestamp) since it does not depend on the learnable weights. Aborts on
    a non-finite loss.
    """
    if not dataset:
        raise ValueError("training needs at least one clip")
    cfg = config.fusion
    if store is None:
        store = init_fusion_weights(config.seed, cfg)
    specs_l = fusion_lsr.param_specs(cfg.unet_widths)
    specs_h = fusion_hsr.all_specs(cfg.grid_config)
    validate_store(store, specs_l + specs_h)
    arrays = {name: arr.astype(cfg.np_dtype) for name, arr in store.items()}

    rng = np.random.default_rng(config.seed)
    adam = Adam(lr=config.lr)
    cache: dict[tuple[int, int], tuple] = {}
    lw = config.loss_weights
    history: list[dict] = []

    for step in range(config.steps):
        ci = int(rng.integers(len(dataset)))
        sample = dataset[ci]
        interval = sample.clip.interval
        interior = range(1, interval) if interval > 1 else range(0, 1)
        t = int(rng.choice(list(interior)))

        key = (ci, t)
        if key not in cache:
            l_hat_frames = upsampled_lhat(sample.clip)
            bundle = align(sample.clip, sample.est, t, cfg, l_hat_frames)
            gt_l = sample.gt_left[t].data.astype(cfg.np_dtype)
            gt_r = sample.gt_right[t].data.astype(cfg.np_dtype)
            cache[key] = (bundle, gt_l, gt_r)
        bundle, gt_l, gt_r = cache[key]

        params = {name: Node(arr) for name, arr in arrays.items()}
        pred_l = reconstruct_lsr(bundle, params, cfg)
        part_l = ops.mean_abs_diff(pred_l, gt_l)
        pyramids = extract_pyramids(bundle, sample.clip, params, cfg)
        pred_r = reconstruct_hsr(bundle, pyramids, params, cfg)
        part_r = ops.mean_abs_diff(pred_r, gt_r)
        total = ops.add(ops.scale(part_l, lw.lambda_l), ops.scale(part_r, lw.lambda_r))

        loss_val = float(value_of(total))
        if not np.isfinite(loss_val):
            raise DivergenceError(f"non-finite loss at step {step}")

        backward(total)
        grads = {name: node.grad for name, node in params.items() if node.grad is not None}
        adam.step(arrays, grads)

        record = {"step": step, "clip": ci, "t": t,
                  "loss_l": float(value_of(part_l)), "loss_r": float(value_of(part_r)),
                  "loss": loss_val}
        history.append(record)
        if config.log_every and step % config.log_every == 0:
            log.info("step %d: loss=%.6f (l=%.6f, r=%.6f)", step, loss_val,
                     record["loss_l"], record["loss_r"])

    out = WeightStore()
    for name, arr in arrays.items():
        out[name] = arr
    return out, history


def warp_diagnostics(sample: TrainSample, config: FusionConfig = FusionConfig()) -> dict:
    """The estimator-quality objectives, evaluated once per clip."""
    l_hat_frames = upsampled_lhat(sample.clip)
    d_term = loss_warp_disp(sample.clip, sample.est, l_hat_frames)
    interval = sample.clip.interval
    f_terms = []
    for t in range(1, interval):
        bundle = align(sample.clip, sample.est, t, config, l_hat_frames)
        f_terms.append(loss_warp_flow(bundle, sample.gt_left[t]))
    s_term = loss_smooth(sample.est.d0, sample.est.d_t_end)
    return {"d": d_term, "f": float(np.mean(f_terms)) if f_terms else 0.0, "s": s_term}
