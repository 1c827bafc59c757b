"""Shared test utilities: independent brute-force oracles and gradient checks.

The oracles here are deliberately naive (per-pixel loops, direct formula
transcription) and never share code with the implementations they check.
"""

from __future__ import annotations

import numpy as np

from duofuse.tape import Node, backward, value_of


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_check(fn, args, wrt, rng, h=1e-5, rtol=1e-4, atol=1e-6,
                            max_coords=None):
    """Compare tape gradients of fn(*args) against central differences.

    `wrt` lists argument positions to differentiate. A random upstream
    gradient G turns the array output into the scalar sum(out * G); the
    analytic gradient of that scalar is checked coordinate by coordinate
    (optionally on a random subset of `max_coords` coordinates).
    """
    nodes = [Node(np.asarray(a, dtype=np.float64)) if i in wrt else a
             for i, a in enumerate(args)]
    out = fn(*nodes)
    g_up = rng.standard_normal(out.value.shape)
    backward(out, g_up)

    def scalar(xs):
        replaced = list(args)
        for i, x in zip(wrt, xs):
            replaced[i] = x
        return float(np.sum(value_of(fn(*replaced)) * g_up))

    bases = [np.asarray(args[i], dtype=np.float64) for i in wrt]
    worst = 0.0
    for slot, i in enumerate(wrt):
        analytic = nodes[i].grad
        if analytic is None:
            analytic = np.zeros_like(bases[slot])
        coords = list(np.ndindex(bases[slot].shape))
        if max_coords is not None and len(coords) > max_coords:
            picks = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[k] for k in picks]
        for idx in coords:
            xp = [b.copy() for b in bases]
            xm = [b.copy() for b in bases]
            xp[slot][idx] += h
            xm[slot][idx] -= h
            fd = (scalar(xp) - scalar(xm)) / (2 * h)
            an = float(analytic[idx])
            err = abs(an - fd) / max(abs(an), abs(fd), atol / rtol)
            worst = max(worst, err)
            assert err < rtol, (
                f"arg {i} coord {idx}: analytic {an:.8g} vs fd {fd:.8g} (err {err:.3g})")
    return worst


# ---------------------------------------------------------------------------
# oracles


def oracle_conv2d(x, w, b, stride=1):
    """Quadruple-loop cross-correlation with zero padding."""
    h, wid, c_in = x.shape
    c_out, _, kh, kw = w.shape
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    out_h = -(-h // stride)
    out_w = -(-wid // stride)
    out = np.zeros((out_h, out_w, c_out))
    for oy in range(out_h):
        for ox in range(out_w):
            for co in range(c_out):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        sy = oy * stride + i - pt
                        sx = ox * stride + j - pl
                        if 0 <= sy < h and 0 <= sx < wid:
                            for ci in range(c_in):
                                acc += x[sy, sx, ci] * w[co, ci, i, j]
                out[oy, ox, co] = acc + (b[co] if b is not None else 0.0)
    return out


def oracle_sample_bilinear(src, flow):
    """Per-pixel border-clamped bilinear sampling."""
    h, w, c = src.shape
    out = np.zeros_like(src)
    for y in range(h):
        for x in range(w):
            sx = min(max(x + flow[y, x, 0], 0.0), w - 1.0)
            sy = min(max(y + flow[y, x, 1], 0.0), h - 1.0)
            x0, y0 = int(np.floor(sx)), int(np.floor(sy))
            x0, y0 = min(x0, w - 1), min(y0, h - 1)
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            fx, fy = sx - x0, sy - y0
            for ch in range(c):
                top = src[y0, x0, ch] * (1 - fx) + src[y0, x1, ch] * fx
                bot = src[y1, x0, ch] * (1 - fx) + src[y1, x1, ch] * fx
                out[y, x, ch] = top * (1 - fy) + bot * fy
    return out


def oracle_splat(src, flow, weight, eps=1e-7):
    """Per-pixel accumulation splat; returns (image, weighted mass).

    Holes are cells with no geometric contribution; elsewhere the image is
    the importance-weighted average of the splatted values.
    """
    h, w, c = src.shape
    num = np.zeros((h, w, c))
    den = np.zeros((h, w))
    geo = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            tx = x + flow[y, x, 0]
            ty = y + flow[y, x, 1]
            x0, y0 = int(np.floor(tx)), int(np.floor(ty))
            fx, fy = tx - x0, ty - y0
            for dy, by in ((0, 1 - fy), (1, fy)):
                for dx, bx in ((0, 1 - fx), (1, fx)):
                    cx, cy = x0 + dx, y0 + dy
                    if 0 <= cx < w and 0 <= cy < h:
                        a = weight[y, x] * bx * by
                        num[cy, cx] += a * src[y, x]
                        den[cy, cx] += a
                        geo[cy, cx] += bx * by
    live = (geo > eps) & (den > 0)
    img = np.where(live[..., None], num / np.where(den, den, 1.0)[..., None], 0.0)
    return img, den


def cubic_weight(t, a=-0.5):
    """Literal piecewise cubic kernel formula."""
    t = abs(t)
    if t <= 1.0:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2.0:
        return a * (t**3 - 5 * t**2 + 8 * t - 4)
    return 0.0


def oracle_resize_bicubic(src, out_h, out_w):
    """Direct kernel-sum bicubic with half-pixel centers and clipped taps."""
    h, w, c = src.shape
    out = np.zeros((out_h, out_w, c))
    for oy in range(out_h):
        cy = (oy + 0.5) * h / out_h - 0.5
        y_base = int(np.floor(cy))
        for ox in range(out_w):
            cx = (ox + 0.5) * w / out_w - 0.5
            x_base = int(np.floor(cx))
            for ch in range(c):
                acc = 0.0
                for i in range(-1, 3):
                    for j in range(-1, 3):
                        wy = cubic_weight(cy - (y_base + i))
                        wx = cubic_weight(cx - (x_base + j))
                        sy = min(max(y_base + i, 0), h - 1)
                        sx = min(max(x_base + j, 0), w - 1)
                        acc += wy * wx * src[sy, sx, ch]
                out[oy, ox, ch] = acc
    return out


def oracle_upper_hull(points):
    """Upper convex hull by exhaustive point-below-segment elimination.

    A point is on the hull iff no pair of other points spans a segment
    strictly above it; endpoints in x are always kept.
    """
    pts = sorted(set((float(x), float(y)) for x, y in points))
    best = {}
    for x, y in pts:
        best[x] = max(best.get(x, -np.inf), y)
    pts = sorted(best.items())
    if len(pts) <= 2:
        return pts
    keep = []
    xs = [p[0] for p in pts]
    for x, y in pts:
        if x in (xs[0], xs[-1]) and y == best[x]:
            dominated = False
        else:
            dominated = False
            for xa, ya in pts:
                for xb, yb in pts:
                    if xa < x < xb:
                        interp = ya + (yb - ya) * (x - xa) / (xb - xa)
                        if interp > y + 1e-15:
                            dominated = True
        if not dominated:
            keep.append((x, y))
    # drop collinear interior points so vertices are unambiguous
    out = [keep[0]]
    for i in range(1, len(keep) - 1):
        (xa, ya), (x, y), (xb, yb) = out[-1], keep[i], keep[i + 1]
        interp = ya + (yb - ya) * (x - xa) / (xb - xa)
        if y > interp + 1e-12:
            out.append(keep[i])
    if len(keep) > 1:
        out.append(keep[-1])
    return out


def random_interior_flow(rng, h, w, lo=-1.2, hi=1.2):
    """A flow whose samples stay strictly inside the frame and off the lattice."""
    flow = rng.uniform(lo, hi, size=(h, w, 2))
    gx = np.arange(w)[None, :, None]
    gy = np.arange(h)[:, None, None]
    tx = gx + flow[:, :, :1]
    ty = gy + flow[:, :, 1:]
    flow[:, :, :1] += np.clip(tx, 0.2, w - 1.2) - tx
    flow[:, :, 1:] += np.clip(ty, 0.2, h - 1.2) - ty
    # nudge off integer grid lines where the interpolant kinks
    frac = flow - np.floor(flow)
    flow += np.where(np.minimum(frac, 1 - frac) < 0.05, 0.07, 0.0)
    return flow
