"""Core raster operators: resampling, convolution, activations, softmax.

Each operator has three faces:

* a plain array function (``ndarray -> ndarray``),
* an explicit ``*_backward`` companion returning gradients w.r.t. every
  differentiable input given the upstream gradient,
* tape awareness: passing :class:`duofuse.tape.Node` inputs records the
  operation so a whole network can be differentiated with ``tape.backward``.

``resize_*`` additionally accept a :class:`duofuse.frame.Frame` and return
the same frame class. Sampling uses half-pixel centers (align-corners
false); edges replicate.
"""

from __future__ import annotations

import numpy as np

from .frame import Frame
from .tape import Node, lift, value_of

# ---------------------------------------------------------------------------
# resampling


def _axis_taps_bilinear(n_in: int, n_out: int, dtype):
    """Source indices (n_out, 2) and weights (n_out, 2) for one axis."""
    c = (np.arange(n_out, dtype=dtype) + 0.5) * (n_in / n_out) - 0.5
    c = np.clip(c, 0.0, n_in - 1.0)
    i0 = np.minimum(np.floor(c).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = (c - i0).astype(dtype)
    idx = np.stack([i0, i1], axis=1)
    wts = np.stack([1.0 - f, f], axis=1)
    return idx, wts


def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    near = (a + 2.0) * at3 - (a + 3.0) * at2 + 1.0
    far = a * (at3 - 5.0 * at2 + 8.0 * at - 4.0)
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _axis_taps_bicubic(n_in: int, n_out: int, dtype):
    c = (np.arange(n_out, dtype=dtype) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(c).astype(np.int64)
    offs = np.arange(-1, 3)
    idx = base[:, None] + offs[None, :]
    wts = _cubic_kernel(c[:, None] - idx.astype(dtype)).astype(dtype)
    idx = np.clip(idx, 0, n_in - 1)
    return idx, wts


def _resize_axis(x: np.ndarray, idx: np.ndarray, wts: np.ndarray, axis: int) -> np.ndarray:
    shape = [1, 1, 1]
    shape[axis] = idx.shape[0]
    out = np.zeros((idx.shape[0],) + x.shape[1:], dtype=x.dtype) if axis == 0 else \
        np.zeros((x.shape[0], idx.shape[0], x.shape[2]), dtype=x.dtype)
    for k in range(idx.shape[1]):
        w = wts[:, k].reshape(shape)
        out += np.take(x, idx[:, k], axis=axis) * w
    return out


def _axis_matrix(n_in: int, idx: np.ndarray, wts: np.ndarray) -> np.ndarray:
    """Dense (n_out, n_in) resampling matrix from per-axis taps."""
    n_out = idx.shape[0]
    a = np.zeros((n_out, n_in), dtype=wts.dtype)
    rows = np.arange(n_out)
    for k in range(idx.shape[1]):
        np.add.at(a, (rows, idx[:, k]), wts[:, k])
    return a


def _resize_axis_adjoint(g: np.ndarray, n_in: int, idx: np.ndarray, wts: np.ndarray,
                         axis: int) -> np.ndarray:
    a = _axis_matrix(n_in, idx, wts)
    if axis == 0:
        n_out, w, c = g.shape
        return (a.T @ g.reshape(n_out, -1)).reshape(n_in, w, c)
    h, n_out, c = g.shape
    flat = g.swapaxes(1, 2).reshape(-1, n_out)
    return (flat @ a).reshape(h, c, n_in).swapaxes(1, 2).copy()


def _check_target(out_h: int, out_w: int):
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be at least 1x1, got {out_h}x{out_w}")


def _resize(x, out_h: int, out_w: int, taps_fn):
    _check_target(out_h, out_w)
    xv = value_of(x)
    yi, yw = taps_fn(xv.shape[0], out_h, xv.dtype)
    xi, xw = taps_fn(xv.shape[1], out_w, xv.dtype)
    val = _resize_axis(_resize_axis(xv, yi, yw, axis=0), xi, xw, axis=1)
    h_in, w_in = xv.shape[:2]

    def vjp(g):
        gy = _resize_axis_adjoint(g, w_in, xi, xw, axis=1)
        return (_resize_axis_adjoint(gy, h_in, yi, yw, axis=0),)

    return lift(val, (x,), vjp)


def resize_bilinear(src, out_h: int, out_w: int):
    """Bilinear resample to (out_h, out_w); linear in the input."""
    if isinstance(src, Frame):
        return type(src)(_resize(src.data, out_h, out_w, _axis_taps_bilinear))
    return _resize(src, out_h, out_w, _axis_taps_bilinear)


def resize_bicubic(src, out_h: int, out_w: int, clamp: tuple | None = (0.0, 1.0)):
    """Catmull-Rom resample; `clamp` bounds image payloads, None leaves raw values."""
    frame_cls = type(src) if isinstance(src, Frame) else None
    x = src.data if frame_cls else src
    out = _resize(x, out_h, out_w, _axis_taps_bicubic)
    if clamp is not None:
        out = np.clip(value_of(out), clamp[0], clamp[1]) if not isinstance(out, Node) \
            else _clip_node(out, clamp[0], clamp[1])
    return frame_cls(out) if frame_cls else out


def _clip_node(x: Node, lo: float, hi: float) -> Node:
    val = np.clip(x.value, lo, hi)
    inside = (x.value > lo) & (x.value < hi)

    def vjp(g):
        return (g * inside,)

    return Node(val, (x,), vjp)


def resize_bilinear_backward(src, out_h: int, out_w: int, grad_out: np.ndarray):
    """Gradient of resize_bilinear w.r.t. the source raster."""
    x = src.data if isinstance(src, Frame) else np.asarray(src)
    yi, yw = _axis_taps_bilinear(x.shape[0], out_h, x.dtype)
    xi, xw = _axis_taps_bilinear(x.shape[1], out_w, x.dtype)
    gy = _resize_axis_adjoint(np.asarray(grad_out), x.shape[1], xi, xw, axis=1)
    return _resize_axis_adjoint(gy, x.shape[0], yi, yw, axis=0)


# ---------------------------------------------------------------------------
# convolution


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int):
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    pb, pr = kh - 1 - pt, kw - 1 - pl
    out_h = (h + stride - 1) // stride
    out_w = (w + stride - 1) // stride
    return (pt, pb, pl, pr), out_h, out_w


_CONV_CHUNK_ELEMS = 8 << 20  # cap transient im2col buffers at inference


def conv2d(x, weight, bias=None, stride: int = 1):
    """Cross-correlation with zero padding: same size at stride 1, ceil-halved at 2.

    `weight` is (c_out, c_in, kh, kw), `bias` (c_out,) or None. Implemented
    as im2col plus one matrix product; the column matrix is kept only when a
    gradient will be needed, otherwise built in bounded row chunks.
    """
    xv, wv = value_of(x), value_of(weight)
    bv = value_of(bias) if bias is not None else None
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if xv.ndim != 3 or wv.ndim != 4:
        raise ValueError("conv2d expects HxWxC input and (c_out,c_in,kh,kw) weights")
    if wv.shape[1] != xv.shape[2]:
        raise ValueError(f"weight expects {wv.shape[1]} input channels, image has {xv.shape[2]}")
    if bv is not None and bv.shape != (wv.shape[0],):
        raise ValueError(f"bias must have shape ({wv.shape[0]},), got {bv.shape}")

    h, w, c_in = xv.shape
    c_out, _, kh, kw = wv.shape
    pads, out_h, out_w = _conv_geometry(h, w, kh, kw, stride)
    pt, pb, pl, pr = pads
    xp = np.pad(xv, ((pt, pb), (pl, pr), (0, 0)))
    # windows[y, x, c, i, j] = xp[stride*y + i, stride*x + j, c]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    win = win[::stride, ::stride]
    k = c_in * kh * kw
    # weight reshape matches the (c, i, j) window layout
    wmat = wv.reshape(c_out, k)
    tracked = isinstance(x, Node) or isinstance(weight, Node) or isinstance(bias, Node)

    if tracked:
        cols = np.ascontiguousarray(win).reshape(out_h * out_w, k)
        out = (cols @ wmat.T).reshape(out_h, out_w, c_out)
    else:
        cols = None
        out = np.empty((out_h, out_w, c_out), dtype=xv.dtype)
        rows = max(1, _CONV_CHUNK_ELEMS // max(1, out_w * k))
        for r0 in range(0, out_h, rows):
            r1 = min(out_h, r0 + rows)
            chunk = np.ascontiguousarray(win[r0:r1]).reshape(-1, k)
            out[r0:r1] = (chunk @ wmat.T).reshape(r1 - r0, out_w, c_out)
    if bv is not None:
        out = out + bv

    def vjp(g):
        gf = np.ascontiguousarray(g).reshape(out_h * out_w, c_out)
        gw = (gf.T @ cols).reshape(wv.shape)
        gcols = (gf @ wmat).reshape(out_h, out_w, c_in, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[i:i + stride * (out_h - 1) + 1:stride,
                    j:j + stride * (out_w - 1) + 1:stride] += gcols[:, :, :, i, j]
        gx = gxp[pt:pt + h, pl:pl + w]
        gb = g.sum(axis=(0, 1)) if bv is not None else None
        return (gx, gw, gb)

    return lift(out, (x, weight, bias), vjp)


def conv2d_backward(x, weight, bias, stride: int, grad_out: np.ndarray):
    """Gradients of conv2d w.r.t. (input, weight, bias)."""
    node_x, node_w = Node(value_of(x)), Node(value_of(weight))
    node_b = Node(value_of(bias)) if bias is not None else None
    out = conv2d(node_x, node_w, node_b, stride)
    grads = out.vjp(np.asarray(grad_out))
    return grads


# ---------------------------------------------------------------------------
# activations


def prelu(x, slope):
    """x if x >= 0 else slope * x; slope is scalar or per-channel (c,)."""
    xv = value_of(x)
    sv = np.asarray(value_of(slope))
    if not np.all(np.isfinite(sv)):
        raise ValueError("prelu slope must be finite")
    neg = xv < 0
    val = np.where(neg, xv * sv, xv)

    def vjp(g):
        gx = np.where(neg, g * sv, g)
        gs_full = g * xv * neg
        if sv.ndim == 0:
            gs = gs_full.sum()
        else:
            gs = gs_full.sum(axis=tuple(range(xv.ndim - 1)))
        return (gx, gs)

    return lift(val, (x, slope), vjp)


def prelu_backward(x, slope, grad_out):
    out = prelu(Node(value_of(x)), Node(np.asarray(value_of(slope))))
    return out.vjp(np.asarray(grad_out))


def channel_softmax(x):
    """Softmax over the channel axis, stabilized by max subtraction."""
    xv = value_of(x)
    if not np.all(np.isfinite(xv)):
        raise ValueError("softmax input must be finite")
    z = xv - xv.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return lift(s, (x,), vjp)


def channel_softmax_backward(x, grad_out):
    out = channel_softmax(Node(value_of(x)))
    return out.vjp(np.asarray(grad_out))


# ---------------------------------------------------------------------------
# elementwise / structural tape helpers


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    av, bv = value_of(a), np.asarray(value_of(b))
    val = av + bv

    def vjp(g):
        return (_unbroadcast(g, np.shape(av)), _unbroadcast(g, np.shape(bv)))

    return lift(val, (a, b), vjp)


def sub(a, b):
    av, bv = value_of(a), np.asarray(value_of(b))
    val = av - bv

    def vjp(g):
        return (_unbroadcast(g, np.shape(av)), -_unbroadcast(g, np.shape(bv)))

    return lift(val, (a, b), vjp)


def mul(a, b):
    av, bv = value_of(a), np.asarray(value_of(b))
    val = av * bv

    def vjp(g):
        return (_unbroadcast(g * bv, np.shape(av)), _unbroadcast(g * av, np.shape(bv)))

    return lift(val, (a, b), vjp)


def scale(x, k: float):
    val = value_of(x) * k

    def vjp(g):
        return (g * k,)

    return lift(val, (x,), vjp)


def exp(x):
    val = np.exp(value_of(x))

    def vjp(g):
        return (g * val,)

    return lift(val, (x,), vjp)


def abs_(x):
    xv = value_of(x)
    val = np.abs(xv)

    def vjp(g):
        return (g * np.sign(xv),)

    return lift(val, (x,), vjp)


def sum_channels(x):
    xv = value_of(x)
    val = xv.sum(axis=-1)

    def vjp(g):
        return (np.broadcast_to(g[..., None], xv.shape).copy(),)

    return lift(val, (x,), vjp)


def concat_channels(*xs):
    vals = [value_of(x) for x in xs]
    val = np.concatenate(vals, axis=-1)
    splits = np.cumsum([v.shape[-1] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=-1))

    return lift(val, xs, vjp)


def take_channels(x, lo: int, hi: int):
    xv = value_of(x)
    val = xv[..., lo:hi]

    def vjp(g):
        gx = np.zeros_like(xv)
        gx[..., lo:hi] = g
        return (gx,)

    return lift(val, (x,), vjp)


def mean_abs_diff(a, b):
    """Mean absolute difference over all samples (the pixel-wise L1 loss)."""
    av, bv = value_of(a), value_of(b)
    if np.shape(av) != np.shape(bv):
        raise ValueError(f"shape mismatch {np.shape(av)} vs {np.shape(bv)}")
    d = av - bv
    val = np.mean(np.abs(d))
    n = d.size

    def vjp(g):
        s = np.sign(d) * (g / n)
        return (s, -s)

    return lift(val, (a, b), vjp)


def pad_reflect(x, pt: int, pb: int, pl: int, pr: int):
    xv = value_of(x)
    val = np.pad(xv, ((pt, pb), (pl, pr), (0, 0)), mode="reflect")
    h, w = xv.shape[:2]

    def vjp(g):
        gx = np.zeros_like(xv)
        # fold every padded cell back onto its reflected source
        ys = _reflect_index(np.arange(val.shape[0]) - pt, h)
        xs = _reflect_index(np.arange(val.shape[1]) - pl, w)
        np.add.at(gx, (ys[:, None], xs[None, :]), g)
        return (gx,)

    return lift(val, (x,), vjp)


def _reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    # numpy 'reflect': no edge repeat; period 2n-2
    if n == 1:
        return np.zeros_like(i)
    period = 2 * n - 2
    i = np.mod(i, period)
    return np.where(i < n, i, period - i)


def crop(x, top: int, left: int, height: int, width: int):
    xv = value_of(x)
    val = xv[top:top + height, left:left + width]

    def vjp(g):
        gx = np.zeros_like(xv)
        gx[top:top + height, left:left + width] = g
        return (gx,)

    return lift(val, (x,), vjp)


def clamp01(x: np.ndarray) -> np.ndarray:
    """Inference-only range clamp for image payloads (not differentiable)."""
    return np.clip(np.asarray(x), 0.0, 1.0)
