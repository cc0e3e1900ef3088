"""Photometric, smoothness and left-right consistency losses for dual networks.

DNM6 pairs one disparity map per network (left from CNN-L, right from
CNN-R) and sums six losses per scale. DNM12 lets each network emit both a
left and a right disparity and sums twelve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .autodiff import ShapeError, Tensor, absolute, channel_mean, exp, mean_all, mul, scale, select_channel
from .stereo_ops import LEFTWARD, RIGHTWARD, image_gradients, ssim_map, warp_horizontal

DNM6_COMPONENTS = ("ap_l", "ap_r", "ds_l", "ds_r", "lr", "rl")
DNM12_COMPONENTS = (
    "ap_ll", "ap_lr", "ap_rl", "ap_rr",
    "ds_ll", "ds_lr", "ds_rl", "ds_rr",
    "lr_l", "rl_l", "lr_r", "rl_r",
)  # fmt: skip
SMOOTHNESS_SOURCES = ("network-input", "disparity-view")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.85
    alpha_ap: float = 1.0
    alpha_ds: float = 0.1
    alpha_lr: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("alpha_ap", "alpha_ds", "alpha_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class LossBreakdown:
    """Per-scale loss components and their weighted totals.

    ``components[s][name]`` holds the loss for scale ``s`` (0-based, full
    resolution first). Values may be tensors (during training) or floats.
    """

    model_kind: int
    components: list[dict] = field(default_factory=list)
    scale_totals: list = field(default_factory=list)
    total: object = 0.0

    @property
    def names(self) -> tuple[str, ...]:
        return DNM6_COMPONENTS if self.model_kind == 6 else DNM12_COMPONENTS

    def as_floats(self) -> "LossBreakdown":
        def f(v):
            return v.item() if isinstance(v, Tensor) else float(v)

        return LossBreakdown(
            self.model_kind,
            [{k: f(v) for k, v in c.items()} for c in self.components],
            [f(v) for v in self.scale_totals],
            f(self.total),
        )

    def columns(self) -> list[str]:
        return [f"s{s + 1}_{name}" for s in range(len(self.components)) for name in self.names]

    def row(self) -> list[float]:
        flat = self.as_floats()
        return [c[name] for c in flat.components for name in self.names]


def _check_same(kind, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


def appearance_loss(target: Tensor, recon: Tensor, weights: LossWeights) -> Tensor:
    """Mean over pixels and channels of alpha*(1-SSIM)/2 + (1-alpha)*|target-recon|."""
    _check_same("appearance_loss", target, recon)
    a = weights.alpha
    l1 = absolute(target - recon)
    if a == 0.0:
        return mean_all(l1)
    dssim = (1.0 - ssim_map(target, recon)) * (a / 2.0)
    if a == 1.0:
        return mean_all(dssim)
    return mean_all(dssim + scale(l1, 1.0 - a))


def smoothness_loss(disp: Tensor, img: Tensor) -> Tensor:
    """Edge-aware first-order disparity smoothness.

    The image edge strength at a pixel is the channel mean of the absolute
    forward difference.
    """
    b, _, h, w = disp.shape
    if disp.values.ndim != 4 or img.shape[0] != b or img.shape[2:] != (h, w):
        raise ShapeError(f"smoothness_loss: disparity {disp.shape} and image {img.shape} disagree")
    dx, dy = image_gradients(disp)
    ix, iy = image_gradients(img)
    wx = exp(-channel_mean(absolute(ix)))
    wy = exp(-channel_mean(absolute(iy)))
    return mean_all(mul(absolute(dx), wx) + mul(absolute(dy), wy))


def lr_consistency_loss(d_a: Tensor, d_b: Tensor, direction: str) -> Tensor:
    """Mean |d_a - d_b projected through d_a|."""
    _check_same("lr_consistency_loss", d_a, d_b)
    projected = warp_horizontal(d_b, d_a, direction)
    return mean_all(absolute(d_a - projected))


def combine_dnm6(c: dict, w: LossWeights):
    """Weighted per-scale cost; works on floats and tensors alike."""
    return (
        (c["ap_l"] + c["ap_r"]) * w.alpha_ap
        + (c["ds_l"] + c["ds_r"]) * w.alpha_ds
        + (c["lr"] + c["rl"]) * w.alpha_lr
    )


def combine_dnm12(c: dict, w: LossWeights):
    ap = c["ap_ll"] + c["ap_lr"] + c["ap_rl"] + c["ap_rr"]
    ds = c["ds_ll"] + c["ds_lr"] + c["ds_rl"] + c["ds_rr"]
    lr = c["lr_l"] + c["rl_l"] + c["lr_r"] + c["rl_r"]
    return ap * w.alpha_ap + ds * w.alpha_ds + lr * w.alpha_lr


def dnm6_components(img_l: Tensor, img_r: Tensor, d_l: Tensor, d_r: Tensor, w: LossWeights) -> dict:
    recon_l = warp_horizontal(img_r, d_l, LEFTWARD)
    recon_r = warp_horizontal(img_l, d_r, RIGHTWARD)
    return {
        "ap_l": appearance_loss(img_l, recon_l, w),
        "ap_r": appearance_loss(img_r, recon_r, w),
        "ds_l": smoothness_loss(d_l, img_l),
        "ds_r": smoothness_loss(d_r, img_r),
        "lr": lr_consistency_loss(d_l, d_r, LEFTWARD),
        "rl": lr_consistency_loss(d_r, d_l, RIGHTWARD),
    }


def scale_cost_dnm6(img_l, img_r, d_l, d_r, w: LossWeights):
    """Returns (components, weighted scale cost)."""
    comps = dnm6_components(img_l, img_r, d_l, d_r, w)
    return comps, combine_dnm6(comps, w)


def dnm12_components(
    img_l, img_r, d_ll, d_lr, d_rl, d_rr, w: LossWeights, smoothness_weight_source: str = "network-input"
) -> dict:
    """The twelve DNM12 losses.

    ``d_ll``/``d_lr`` come from CNN-L (fed the left image), ``d_rl``/``d_rr``
    from CNN-R. With ``smoothness_weight_source="network-input"`` each map's
    edge weights come from its network's input image; with
    ``"disparity-view"`` from the image of the view the map belongs to.
    """
    if smoothness_weight_source == "network-input":
        edges = {"ll": img_l, "lr": img_l, "rl": img_r, "rr": img_r}
    elif smoothness_weight_source == "disparity-view":
        edges = {"ll": img_l, "lr": img_r, "rl": img_l, "rr": img_r}
    else:
        raise ValueError(f"smoothness_weight_source must be one of {SMOOTHNESS_SOURCES}")
    disps = {"ll": d_ll, "lr": d_lr, "rl": d_rl, "rr": d_rr}
    recon = {
        "ll": (img_l, warp_horizontal(img_r, d_ll, LEFTWARD)),
        "lr": (img_r, warp_horizontal(img_l, d_lr, RIGHTWARD)),
        "rl": (img_l, warp_horizontal(img_r, d_rl, LEFTWARD)),
        "rr": (img_r, warp_horizontal(img_l, d_rr, RIGHTWARD)),
    }
    out = {}
    for k, (target, rec) in recon.items():
        out[f"ap_{k}"] = appearance_loss(target, rec, w)
    for k, d in disps.items():
        out[f"ds_{k}"] = smoothness_loss(d, edges[k])
    out["lr_l"] = lr_consistency_loss(d_ll, d_lr, LEFTWARD)
    out["rl_l"] = lr_consistency_loss(d_lr, d_ll, RIGHTWARD)
    out["lr_r"] = lr_consistency_loss(d_rl, d_rr, LEFTWARD)
    out["rl_r"] = lr_consistency_loss(d_rr, d_rl, RIGHTWARD)
    return {name: out[name] for name in DNM12_COMPONENTS}


def scale_cost_dnm12(img_l, img_r, d_ll, d_lr, d_rl, d_rr, w: LossWeights, smoothness_weight_source="network-input"):
    comps = dnm12_components(img_l, img_r, d_ll, d_lr, d_rl, d_rr, w, smoothness_weight_source)
    return comps, combine_dnm12(comps, w)


def _check_scales(*pyramids: Sequence):
    n = len(pyramids[0])
    if n == 0 or any(len(p) != n for p in pyramids):
        raise ShapeError(f"scale count mismatch: {[len(p) for p in pyramids]}")


def _sum(values):
    total = values[0]
    for v in values[1:]:
        total = total + v
    return total


def total_cost_dnm6(pyr_l, pyr_r, disp_l, disp_r, w: LossWeights) -> LossBreakdown:
    """Sum of per-scale DNM6 costs over all scales of the given pyramids."""
    _check_scales(pyr_l, pyr_r, disp_l, disp_r)
    out = LossBreakdown(6)
    for il, ir, dl, dr in zip(pyr_l, pyr_r, disp_l, disp_r):
        comps, cs = scale_cost_dnm6(il, ir, dl, dr, w)
        out.components.append(comps)
        out.scale_totals.append(cs)
    out.total = _sum(out.scale_totals)
    return out


def total_cost_dnm12(
    pyr_l, pyr_r, disp_l, disp_r, w: LossWeights, smoothness_weight_source="network-input"
) -> LossBreakdown:
    """Sum of per-scale DNM12 costs.

    ``disp_l`` / ``disp_r`` are the two-channel pyramids of CNN-L / CNN-R.
    Channel 0 is the same-view map (d_ll for CNN-L, d_rr for CNN-R) and
    channel 1 the cross-view map (d_lr, d_rl).
    """
    _check_scales(pyr_l, pyr_r, disp_l, disp_r)
    out = LossBreakdown(12)
    for il, ir, dl, dr in zip(pyr_l, pyr_r, disp_l, disp_r):
        d_ll, d_lr = select_channel(dl, 0), select_channel(dl, 1)
        d_rr, d_rl = select_channel(dr, 0), select_channel(dr, 1)
        comps, cs = scale_cost_dnm12(il, ir, d_ll, d_lr, d_rl, d_rr, w, smoothness_weight_source)
        out.components.append(comps)
        out.scale_totals.append(cs)
    out.total = _sum(out.scale_totals)
    return out


def recompose(breakdown: LossBreakdown, w: LossWeights) -> float:
    """Recompute the grand total from stored float components."""
    flat = breakdown.as_floats()
    combine = combine_dnm6 if flat.model_kind == 6 else combine_dnm12
    return float(sum(combine(c, w) for c in flat.components))
