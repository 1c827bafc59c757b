"""Adaptive weighting fusion head for the fast low-resolution view.

A U-net over the 15-channel stack (upscaled frame, two warped sharp-view
candidates, two disparities, two flows) emits 53 feature channels: 50 become
two per-pixel 5x5 dynamic filters that rectify the warped candidates, the
last 3 become softmax blending masks. The blended result is a per-pixel
convex combination of the two rectified candidates and the upscaled frame.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .fileio import WeightStore
from .layers import ParamSpec, conv_prelu, conv, conv_specs, init_params, prelu_spec
from .tape import lift, value_of

PREFIX = "fusion_lsr"
DEFAULT_WIDTHS = (32, 64, 128, 256)
IN_CHANNELS = 15  # 3+3+3 images, 1+1 disparities, 2+2 flows
OUT_CHANNELS = 53  # 25 + 25 filter taps, 3 mask logits
FILTER_SIZE = 5


def param_specs(widths: tuple = DEFAULT_WIDTHS) -> list[ParamSpec]:
    w1, w2, w3, w4 = widths
    specs: list[ParamSpec] = []

    def block(name, c_in, c_out):
        specs.extend(conv_specs(f"{PREFIX}/{name}", c_in, c_out))
        specs.extend(prelu_spec(f"{PREFIX}/{name}", c_out))

    block("enc1a", IN_CHANNELS, w1)
    block("enc1b", w1, w1)
    block("down1", w1, w2)
    block("enc2", w2, w2)
    block("down2", w2, w3)
    block("enc3", w3, w3)
    block("down3", w3, w4)
    block("enc4", w4, w4)
    block("dec3a", w4 + w3, w3)
    block("dec3b", w3, w3)
    block("dec2a", w3 + w2, w2)
    block("dec2b", w2, w2)
    block("dec1a", w2 + w1, w1)
    block("dec1b", w1, w1)
    specs.extend(conv_specs(f"{PREFIX}/head", w1, OUT_CHANNELS))
    return specs


def init_weights(rng: np.random.Generator, dtype=np.float64,
                 widths: tuple = DEFAULT_WIDTHS) -> WeightStore:
    return init_params(param_specs(widths), rng, dtype)


def _p(name: str) -> str:
    return f"{PREFIX}/{name}"


def fusion_features(l_hat, l1, l2, d1, d2, f0, f_t, params: dict):
    """Run the U-net on the concatenated guidance stack; returns 53 channels."""
    chans = [value_of(x).shape[-1] for x in (l_hat, l1, l2, d1, d2, f0, f_t)]
    if chans != [3, 3, 3, 1, 1, 2, 2]:
        raise ValueError(f"expected channel layout [3,3,3,1,1,2,2], got {chans}")
    shapes = {value_of(x).shape[:2] for x in (l_hat, l1, l2, d1, d2, f0, f_t)}
    if len(shapes) != 1:
        raise ValueError(f"inputs disagree on resolution: {sorted(shapes)}")

    x = ops.concat_channels(l_hat, l1, l2, d1, d2, f0, f_t)
    e1 = conv_prelu(params, _p("enc1b"), conv_prelu(params, _p("enc1a"), x))
    e2 = conv_prelu(params, _p("enc2"), conv_prelu(params, _p("down1"), e1, stride=2))
    e3 = conv_prelu(params, _p("enc3"), conv_prelu(params, _p("down2"), e2, stride=2))
    e4 = conv_prelu(params, _p("enc4"), conv_prelu(params, _p("down3"), e3, stride=2))

    def up_to(x_small, ref):
        h, w = value_of(ref).shape[:2]
        return ops.resize_bilinear(x_small, h, w)

    d3 = ops.concat_channels(up_to(e4, e3), e3)
    d3 = conv_prelu(params, _p("dec3b"), conv_prelu(params, _p("dec3a"), d3))
    d2_ = ops.concat_channels(up_to(d3, e2), e2)
    d2_ = conv_prelu(params, _p("dec2b"), conv_prelu(params, _p("dec2a"), d2_))
    d1_ = ops.concat_channels(up_to(d2_, e1), e1)
    d1_ = conv_prelu(params, _p("dec1b"), conv_prelu(params, _p("dec1a"), d1_))
    return conv(params, _p("head"), d1_)


def apply_dynamic_filter(img, kernels):
    """Per-pixel 5x5 filtering with replicate borders.

    Tap t of `kernels` (h, w, 25) weighs the neighbor at row offset t//5 - 2,
    column offset t%5 - 2; the same kernel field is applied to every image
    channel.
    """
    iv, kv = value_of(img), value_of(kernels)
    if kv.shape[:2] != iv.shape[:2]:
        raise ValueError(f"kernel field {kv.shape[:2]} must match image {iv.shape[:2]}")
    if kv.shape[2] != FILTER_SIZE ** 2:
        raise ValueError(f"kernel field needs {FILTER_SIZE ** 2} tap channels, got {kv.shape[2]}")
    h, w, c = iv.shape
    r = FILTER_SIZE // 2
    pad = np.pad(iv, ((r, r), (r, r), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(pad, (FILTER_SIZE, FILTER_SIZE), axis=(0, 1))
    win = win.reshape(h, w, c, FILTER_SIZE ** 2)
    out = np.einsum("hwct,hwt->hwc", win, kv)

    def vjp(g):
        gk = np.einsum("hwc,hwct->hwt", g, win)
        gpad = np.zeros_like(pad)
        for t in range(FILTER_SIZE ** 2):
            i, j = divmod(t, FILTER_SIZE)
            gpad[i:i + h, j:j + w] += g * kv[:, :, t, None]
        # replicate-pad adjoint: fold border sums onto edge pixels
        gpad[r] += gpad[:r].sum(axis=0)
        gpad[h + r - 1] += gpad[h + r:].sum(axis=0)
        core = gpad[r:r + h]
        gimg = core[:, r:r + w].copy()
        gimg[:, 0] += core[:, :r].sum(axis=1)
        gimg[:, w - 1] += core[:, w + r:].sum(axis=1)
        return (gimg, gk)

    return lift(out, (img, kernels), vjp)


def apply_dynamic_filter_backward(img, kernels, grad_out):
    from .tape import Node
    out = apply_dynamic_filter(Node(value_of(img)), Node(value_of(kernels)))
    return out.vjp(np.asarray(grad_out))


def blend(l1k, l2k, l_hat, mask_logits):
    """Softmax-mask blend: M0*l1k + M1*l2k + M2*l_hat per pixel."""
    shapes = {value_of(x).shape[:2] for x in (l1k, l2k, l_hat, mask_logits)}
    if len(shapes) != 1:
        raise ValueError(f"blend inputs disagree on resolution: {sorted(shapes)}")
    if value_of(mask_logits).shape[-1] != 3:
        raise ValueError("blend expects 3 mask logit channels")
    masks = ops.channel_softmax(mask_logits)
    out = ops.mul(ops.take_channels(masks, 0, 1), l1k)
    out = ops.add(out, ops.mul(ops.take_channels(masks, 1, 2), l2k))
    return ops.add(out, ops.mul(ops.take_channels(masks, 2, 3), l_hat))


def reconstruct(l_hat, l1, l2, d1, d2, f0, f_t, params: dict):
    """Full head: features, two dynamic filters, mask blend."""
    fm = fusion_features(l_hat, l1, l2, d1, d2, f0, f_t, params)
    k1 = ops.take_channels(fm, 0, 25)
    k2 = ops.take_channels(fm, 25, 50)
    logits = ops.take_channels(fm, 50, 53)
    l1k = apply_dynamic_filter(l1, k1)
    l2k = apply_dynamic_filter(l2, k2)
    return blend(l1k, l2k, l_hat, logits)
