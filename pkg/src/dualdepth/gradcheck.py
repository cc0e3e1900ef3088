"""Finite-difference verification suite for every differentiable operation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .dualnet import NetworkConfig, forward, init_params
from .objectives import (
    LossWeights,
    appearance_loss,
    lr_consistency_loss,
    smoothness_loss,
    total_cost_dnm6,
    total_cost_dnm12,
)
from .stereo_ops import LEFTWARD, RIGHTWARD, build_pyramid, image_gradients, ssim_map, warp_horizontal

SMOOTH_TOL = 1e-6
DEFAULT_TOL = 1e-4


@dataclass
class Check:
    name: str
    fn: Callable[[Tensor], Tensor]
    point: np.ndarray
    tol: float = DEFAULT_TOL
    eps: float = 1e-5


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error < self.tol


def _weighted_sum(seed: int, shape) -> Callable[[Tensor], Tensor]:
    """Scalarize a tensor output with fixed random weights (keeps every adjoint distinct)."""
    w = Tensor(np.random.default_rng(seed).normal(size=shape))
    return lambda t: ad.sum_all(ad.mul(t, w))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def elementwise_checks(rng: np.random.Generator) -> list[Check]:
    shape = (2, 3)
    other = Tensor(rng.normal(size=shape))
    red = _weighted_sum(1, shape)
    return [
        Check("add", lambda t: red(ad.add(t, other)), rng.normal(size=shape), SMOOTH_TOL),
        Check("sub", lambda t: red(ad.sub(other, t)), rng.normal(size=shape), SMOOTH_TOL),
        Check("mul", lambda t: red(ad.mul(t, other)), rng.normal(size=shape), SMOOTH_TOL),
        Check("abs", lambda t: red(ad.absolute(t)), _away_from_zero(rng, shape), SMOOTH_TOL),
        Check("exp", lambda t: red(ad.exp(t)), rng.normal(size=shape), SMOOTH_TOL),
        Check("neg", lambda t: red(ad.neg(t)), rng.normal(size=shape), SMOOTH_TOL),
        Check("scale", lambda t: red(ad.scale(t, -2.5)), rng.normal(size=shape), SMOOTH_TOL),
        Check("mean_all", lambda t: ad.mean_all(t), rng.normal(size=shape), SMOOTH_TOL),
        Check("div", lambda t: red(ad.div(other, t)), _away_from_zero(rng, shape, 0.5), SMOOTH_TOL),
        Check("square", lambda t: red(ad.square(t)), rng.normal(size=shape), SMOOTH_TOL),
        Check("sigmoid", lambda t: red(ad.sigmoid(t)), rng.normal(size=shape) * 2, SMOOTH_TOL),
        Check("elu", lambda t: red(ad.elu(t)), _away_from_zero(rng, shape), SMOOTH_TOL),
    ]


def tensor_checks(rng: np.random.Generator) -> list[Check]:
    x = rng.normal(size=(2, 2, 5, 7))
    k = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    red_conv = _weighted_sum(2, (2, 3, 5, 7))
    red_s2 = _weighted_sum(3, (2, 3, 2, 3))
    img = rng.uniform(size=(1, 2, 4, 6))
    return [
        Check("conv2d.input", lambda t: red_conv(ad.conv2d(t, Tensor(k), Tensor(bias), padding=1)), x, 1e-5),
        Check("conv2d.kernel", lambda t: red_conv(ad.conv2d(Tensor(x), t, Tensor(bias), padding=1)), k, 1e-5),
        Check("conv2d.bias", lambda t: red_conv(ad.conv2d(Tensor(x), Tensor(k), t, padding=1)), bias, 1e-5),
        Check("conv2d.stride2", lambda t: red_s2(ad.conv2d(t, Tensor(k), stride=2)), x, 1e-5),
        Check("avg_pool2", lambda t: _weighted_sum(4, (1, 2, 2, 3))(ad.avg_pool2(t)), img, SMOOTH_TOL),
        Check("upsample2", lambda t: _weighted_sum(5, (1, 1, 6, 6))(ad.upsample2(t)), rng.normal(size=(1, 1, 3, 3)), SMOOTH_TOL),
        Check("concat", lambda t: _weighted_sum(6, (1, 4, 4, 6))(ad.concat_channels([t, Tensor(img)])), img, SMOOTH_TOL),
        Check("channel_mean", lambda t: _weighted_sum(7, (1, 1, 4, 6))(ad.channel_mean(t)), img, SMOOTH_TOL),
    ]


def stereo_checks(rng: np.random.Generator) -> list[Check]:
    src = rng.uniform(size=(2, 3, 4, 8))
    disp = rng.uniform(0.02, 0.3, size=(2, 1, 4, 8))
    other = rng.uniform(size=(2, 3, 4, 8))
    red = _weighted_sum(8, (2, 3, 4, 8))
    w = LossWeights()
    d_other = rng.uniform(0.02, 0.3, size=(2, 1, 4, 8))
    return [
        Check("warp.source", lambda t: red(warp_horizontal(t, Tensor(disp), LEFTWARD)), src),
        Check("warp.disparity", lambda t: red(warp_horizontal(Tensor(src), t, RIGHTWARD)), disp),
        Check("ssim_map", lambda t: red(ssim_map(t, Tensor(other))), src),
        Check("image_gradients", lambda t: _grad_loss(t), src, SMOOTH_TOL),
        Check("appearance_loss", lambda t: appearance_loss(Tensor(src), t, w), other),
        Check("smoothness_loss", lambda t: smoothness_loss(t, Tensor(src)), disp),
        Check("lr_consistency.a", lambda t: lr_consistency_loss(t, Tensor(d_other), LEFTWARD), disp),
        Check("lr_consistency.b", lambda t: lr_consistency_loss(Tensor(disp), t, RIGHTWARD), d_other),
    ]


def _grad_loss(t: Tensor) -> Tensor:
    gx, gy = image_gradients(t)
    return ad.sum_all(ad.square(gx)) + ad.sum_all(ad.square(gy)) * 0.5


def total_cost_checks(rng: np.random.Generator, levels: int = 3) -> list[Check]:
    """Total costs on a batch of two 8x16 pairs, differentiated w.r.t. all disparity values."""
    shape = (2, 3, 8, 16)
    il, ir = rng.uniform(size=shape), rng.uniform(size=shape)
    w = LossWeights()
    pyr_l = build_pyramid(Tensor(il), levels)
    pyr_r = build_pyramid(Tensor(ir), levels)
    h, wd = shape[2:]
    sizes = [(h >> s) * (wd >> s) for s in range(levels)]

    def make(kind: int):
        ch = 1 if kind == 6 else 2
        total = 2 * ch * sum(sizes)
        point = rng.uniform(0.02, 0.25, size=2 * total)

        def f(t: Tensor) -> Tensor:
            left = _split(t, 0, ch, levels, h, wd)
            right = _split(t, total, ch, levels, h, wd)
            if kind == 6:
                return total_cost_dnm6(pyr_l, pyr_r, left, right, w).total
            return total_cost_dnm12(pyr_l, pyr_r, left, right, w).total

        return Check(f"total_cost_dnm{kind}", f, point, DEFAULT_TOL, eps=1e-6)

    return [make(6), make(12)]


def _split(t: Tensor, start: int, channels: int, levels: int, h: int, w: int) -> list[Tensor]:
    out, offset = [], start
    for s in range(levels):
        shape = (2, channels, h >> s, w >> s)
        n = int(np.prod(shape))
        out.append(_view(t, offset, shape))
        offset += n
    return out


def _view(t: Tensor, offset: int, shape) -> Tensor:
    n = int(np.prod(shape))
    size = t.size

    def backward(g):
        full = np.zeros(size)
        full[offset : offset + n] = g.reshape(-1)
        return (full,)

    return ad.make_op("view", (t,), t.values[offset : offset + n].reshape(shape).copy(), backward)


def network_checks(rng: np.random.Generator, coords_per_tensor: int = 2) -> list[Check]:
    """Mean pyramid output w.r.t. sampled coordinates of every parameter tensor (32x64 input)."""
    cfg = NetworkConfig(seed=3)
    params = init_params(cfg)
    # nonzero biases so every bias gradient path is exercised
    for name, arr in params.arrays.items():
        if name.endswith(".bias"):
            arr[:] = rng.normal(scale=0.1, size=arr.shape)
    image = Tensor(rng.uniform(size=(1, 3, 32, 64)))
    checks = []
    for name in params.names:
        base = params.arrays[name]
        idx = rng.choice(base.size, size=min(coords_per_tensor, base.size), replace=False)

        def f(t: Tensor, name=name, base=base, idx=idx) -> Tensor:
            full = _scatter(t, base, idx)
            tensors = params.as_tensors()
            tensors[name] = full
            pyr = forward(tensors, image, cfg)
            total = ad.mean_all(pyr[0])
            for p in pyr[1:]:
                total = total + ad.mean_all(p)
            return total

        checks.append(Check(f"dualnet.{name}", f, base.reshape(-1)[idx].copy(), DEFAULT_TOL))
    return checks


def _scatter(t: Tensor, base: np.ndarray, idx: np.ndarray) -> Tensor:
    values = base.copy().reshape(-1)
    values[idx] = t.values
    shape = base.shape
    return ad.make_op("scatter", (t,), values.reshape(shape), lambda g: (g.reshape(-1)[idx],))


def default_suite(seed: int = 0, include_network: bool = True) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = elementwise_checks(rng) + tensor_checks(rng) + stereo_checks(rng) + total_cost_checks(rng)
    if include_network:
        checks += network_checks(rng)
    return checks


def run_suite(checks: list[Check]) -> list[CheckResult]:
    return [CheckResult(c.name, grad_check(c.fn, c.point, c.eps), c.tol) for c in checks]


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'max rel err':>12}  {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.error:12.3e}  {r.tol:8.0e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
