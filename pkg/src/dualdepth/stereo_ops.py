"""Differentiable image-domain primitives for rectified stereo.

Images are (b, c, h, w) tensors in [0, 1]. Disparities are (b, 1, h, w)
tensors in units of image width, so a value ``v`` is a shift of ``v * w``
pixels at any resolution.

Stereo convention: a scene point at column ``x`` of the left image appears
at ``x - d*w`` in the right image. The left view is reconstructed from the
right image by sampling leftward; the right view from the left image by
sampling rightward.
"""
from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor, avg_pool2, make_op, mul, square

LEFTWARD = "leftward"
RIGHTWARD = "rightward"

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _direction_sign(direction: str) -> float:
    if direction == LEFTWARD:
        return -1.0
    if direction == RIGHTWARD:
        return 1.0
    raise ValueError(f"direction must be {LEFTWARD!r} or {RIGHTWARD!r}, got {direction!r}")


def opposite(direction: str) -> str:
    _direction_sign(direction)
    return RIGHTWARD if direction == LEFTWARD else LEFTWARD


def warp_horizontal(source: Tensor, disp: Tensor, direction: str) -> Tensor:
    """Bilinearly resample ``source`` along rows at ``x -/+ disp(x) * w``.

    Sample coordinates are clamped to ``[0, w-1]``; where clamping engages the
    output does not depend on ``disp``.
    """
    sign = _direction_sign(direction)
    if source.values.ndim != 4 or disp.values.ndim != 4:
        raise ShapeError(f"warp_horizontal expects 4-D tensors, got {source.shape} and {disp.shape}")
    b, c, h, w = source.shape
    if disp.shape != (b, 1, h, w):
        raise ShapeError(f"warp_horizontal: disparity shape {disp.shape} does not match source {source.shape}")

    xs = np.arange(w, dtype=np.float64)
    raw = xs + sign * w * disp.values[:, 0]  # (b, h, w)
    inside = (raw >= 0.0) & (raw <= w - 1)
    bad = ~np.isfinite(raw)
    pos = np.clip(np.where(bad, 0.0, raw), 0.0, w - 1)
    x0 = np.floor(pos).astype(np.int64)
    x0 = np.minimum(x0, w - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    frac = pos - x0

    src = source.values
    i0 = np.broadcast_to(x0[:, None], (b, c, h, w))
    i1 = np.broadcast_to(x1[:, None], (b, c, h, w))
    v0 = np.take_along_axis(src, i0, axis=3)
    v1 = np.take_along_axis(src, i1, axis=3)
    f = frac[:, None]
    out = v0 + f * (v1 - v0)
    if bad.any():
        # a non-finite disparity poisons its sample instead of indexing garbage
        out = np.where(bad[:, None], np.nan, out)

    def backward(g):
        gs = None
        if source.requires_grad:
            # scatter-add both interpolation taps into flattened rows
            row_base = (np.arange(b * c * h) * w).reshape(b, c, h, 1)
            idx0 = (row_base + i0).reshape(-1)
            idx1 = (row_base + i1).reshape(-1)
            n = b * c * h * w
            gs = np.bincount(idx0, weights=(g * (1.0 - f)).reshape(-1), minlength=n)
            gs += np.bincount(idx1, weights=(g * f).reshape(-1), minlength=n)
            gs = gs.reshape(b, c, h, w)
        gd = None
        if disp.requires_grad:
            slope = (g * (v1 - v0)).sum(axis=1, keepdims=True)
            gd = slope * (sign * w) * inside[:, None]
        return gs, gd

    return make_op("warp_horizontal", (source, disp), out, backward)


def box_filter3(x: Tensor) -> Tensor:
    """3x3 mean with edge-replicated borders; output has the input's shape."""
    h, w = x.shape[-2:]
    xp = np.pad(x.values, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros(x.shape)
    for u in range(3):
        for v in range(3):
            out += xp[..., u : u + h, v : v + w]
    out /= 9.0

    def backward(g):
        gp = np.zeros(xp.shape)
        g9 = g / 9.0
        for u in range(3):
            for v in range(3):
                gp[..., u : u + h, v : v + w] += g9
        # fold replicated border back onto the edge pixels
        rows = gp[..., 1:-1, :].copy()
        rows[..., 0, :] += gp[..., 0, :]
        rows[..., -1, :] += gp[..., -1, :]
        gx = rows[..., 1:-1].copy()
        gx[..., 0] += rows[..., 0]
        gx[..., -1] += rows[..., -1]
        return (gx,)

    return make_op("box_filter3", (x,), out, backward)


def ssim_map(a: Tensor, b: Tensor, c1: float = SSIM_C1, c2: float = SSIM_C2) -> Tensor:
    """Per-pixel, per-channel SSIM using 3x3 local statistics."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim_map: shape mismatch {a.shape} vs {b.shape}")
    mu_a = box_filter3(a)
    mu_b = box_filter3(b)
    mu_a2 = square(mu_a)
    mu_b2 = square(mu_b)
    mu_ab = mul(mu_a, mu_b)
    var_a = box_filter3(square(a)) - mu_a2
    var_b = box_filter3(square(b)) - mu_b2
    cov = box_filter3(mul(a, b)) - mu_ab
    num = (mu_ab * 2.0 + c1) * (cov * 2.0 + c2)
    den = (mu_a2 + mu_b2 + c1) * (var_a + var_b + c2)
    return num / den


def _gradient(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    v = x.values
    out = np.zeros(x.shape)
    lo = [slice(None)] * 4
    hi = [slice(None)] * 4
    lo[axis] = slice(0, n - 1)
    hi[axis] = slice(1, n)
    lo, hi = tuple(lo), tuple(hi)
    out[lo] = v[hi] - v[lo]

    def backward(g):
        gx = np.zeros(x.shape)
        gx[hi] += g[lo]
        gx[lo] -= g[lo]
        return (gx,)

    return make_op("gradient_x" if axis == 3 else "gradient_y", (x,), out, backward)


def image_gradients(x: Tensor) -> tuple[Tensor, Tensor]:
    """Forward differences along width and height; the last column/row is zero."""
    if x.values.ndim != 4:
        raise ShapeError(f"image_gradients expects a 4-D tensor, got {x.shape}")
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError(f"image_gradients needs at least 2x2 extents, got {h}x{w}")
    return _gradient(x, 3), _gradient(x, 2)


def build_pyramid(x: Tensor, levels: int = 4) -> list[Tensor]:
    """Level 1 is ``x``; each further level is a 2x2 average of the previous one."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    h, w = x.shape[-2:]
    f = 2 ** (levels - 1)
    if h % f or w % f:
        raise ShapeError(
            f"build_pyramid: {h}x{w} is not divisible by {f} for {levels} levels; crop the input first"
        )
    out = [x]
    for _ in range(levels - 1):
        out.append(avg_pool2(out[-1]))
    return out

