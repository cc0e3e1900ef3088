"""Disparity to depth conversion, flip post-processing and depth metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

DEPTH_MIN = 1e-3
DEPTH_CAP = 80.0
PP_RAMP = 0.05

METRIC_FIELDS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "d1_all", "a1", "a2", "a3")


@dataclass(frozen=True)
class CameraRig:
    focal_px: float
    baseline_m: float

    def __post_init__(self):
        if not (self.focal_px > 0 and self.baseline_m > 0):
            raise ValueError(f"focal length and baseline must be positive, got {self.focal_px}, {self.baseline_m}")


@dataclass
class DepthMap:
    depth: np.ndarray
    valid: np.ndarray

    @classmethod
    def dense(cls, depth) -> "DepthMap":
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, np.isfinite(depth) & (depth > 0))


@dataclass
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    d1_all: float
    a1: float
    a2: float
    a3: float
    pixels: int = 0

    def values(self) -> list[float]:
        return [getattr(self, k) for k in METRIC_FIELDS]

    def to_dict(self) -> dict:
        return asdict(self)


def disparity_to_depth(d, rig: CameraRig, min_disp_px: float = 0.01, width: int | None = None) -> DepthMap:
    """Depth = f*B / max(d, min_disp_px).

    ``d`` is in pixels unless ``width`` is given, in which case it is taken
    as a width fraction and scaled first. Clamped pixels remain valid.
    """
    if min_disp_px <= 0:
        raise ValueError("min_disp_px must be positive")
    d = np.asarray(d, dtype=np.float64)
    if width is not None:
        d = d * width
    depth = rig.focal_px * rig.baseline_m / np.maximum(d, min_disp_px)
    return DepthMap(depth, np.isfinite(d))


def depth_to_disparity(depth, rig: CameraRig) -> np.ndarray:
    return rig.focal_px * rig.baseline_m / np.asarray(depth, dtype=np.float64)


def edge_masks(width: int, ramp: float = PP_RAMP) -> tuple[np.ndarray, np.ndarray]:
    """Weights for the flipped (left edge) and direct (right edge) predictions."""
    u = np.linspace(0.0, 1.0, width)
    left = np.clip(1.0 - u / ramp, 0.0, 1.0)
    return left, left[::-1].copy()


def blend_flipped(d1: np.ndarray, d2: np.ndarray, ramp: float = PP_RAMP) -> np.ndarray:
    w_l, w_r = edge_masks(d1.shape[-1], ramp)
    return w_l * d2 + w_r * d1 + (1.0 - w_l - w_r) * (0.5 * (d1 + d2))


def post_process(predict: Callable[[np.ndarray], np.ndarray], image: np.ndarray, ramp: float = PP_RAMP) -> np.ndarray:
    """Blend a prediction with the mirrored prediction of the mirrored image.

    Near the left border the mirrored pass is trusted, near the right border
    the direct pass, and the interior takes their mean.
    """
    d1 = predict(image)
    d2 = predict(image[..., ::-1].copy())[..., ::-1]
    return blend_flipped(d1, d2, ramp)


def d1_all(d_pred, d_gt, valid=None) -> float:
    """Percentage of valid pixels off by more than 3 px and more than 5 %."""
    d_pred = np.asarray(d_pred, dtype=np.float64)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    if d_pred.shape != d_gt.shape:
        raise ValueError(f"shape mismatch {d_pred.shape} vs {d_gt.shape}")
    mask = (d_gt > 0) if valid is None else np.asarray(valid, dtype=bool)
    if not mask.any():
        raise ValueError("no valid pixels")
    err = np.abs(d_pred - d_gt)[mask]
    bad = (err > 3.0) & (err > 0.05 * d_gt[mask])
    return 100.0 * float(bad.mean())


def compute_metrics(
    pred: DepthMap,
    gt: DepthMap,
    rig: CameraRig | None = None,
    depth_min: float = DEPTH_MIN,
    depth_cap: float = DEPTH_CAP,
) -> MetricsReport:
    """Standard depth errors over pixels where ``gt`` is valid and in range.

    Predictions are clamped to ``[depth_min, depth_cap]``. d1-all needs the
    rig to recover disparities; without one it is NaN.
    """
    if pred.depth.shape != gt.depth.shape:
        raise ValueError(f"shape mismatch {pred.depth.shape} vs {gt.depth.shape}")
    mask = gt.valid & (gt.depth >= depth_min) & (gt.depth <= depth_cap)
    if not mask.any():
        raise ValueError("no valid ground-truth pixels")
    G = gt.depth[mask]
    D = np.clip(pred.depth[mask], depth_min, depth_cap)

    thresh = np.maximum(D / G, G / D)
    diff = D - G
    d1 = float("nan")
    if rig is not None:
        d1 = d1_all(depth_to_disparity(D, rig), depth_to_disparity(G, rig), np.ones(G.shape, bool))
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(diff) / G)),
        sq_rel=float(np.mean(diff**2 / G)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(D) - np.log(G)) ** 2))),
        d1_all=d1,
        a1=float(np.mean(thresh < 1.25)),
        a2=float(np.mean(thresh < 1.25**2)),
        a3=float(np.mean(thresh < 1.25**3)),
        pixels=int(mask.sum()),
    )


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Uniform mean over images."""
    if not reports:
        raise ValueError("nothing to aggregate")
    means = {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_FIELDS}
    return MetricsReport(**means, pixels=sum(r.pixels for r in reports))


def evaluate_predictions(
    disparities: Sequence[np.ndarray],
    samples: Sequence,
    rig: CameraRig,
    min_disp_px: float = 0.01,
) -> list[MetricsReport]:
    """Per-image metrics for predicted width-fraction disparities (h, w) against sample ground truth."""
    reports = []
    for disp, sample in zip(disparities, samples, strict=True):
        if sample.gt_disparity is None:
            raise ValueError("sample has no ground-truth disparity")
        w = sample.left.shape[-1]
        r = sample.rig or rig
        gt_px = np.asarray(sample.gt_disparity, dtype=np.float64).reshape(disp.shape[-2:]) * w
        pred = disparity_to_depth(np.asarray(disp).reshape(gt_px.shape), r, min_disp_px, width=w)
        gt = DepthMap(np.where(gt_px > 0, r.focal_px * r.baseline_m / np.where(gt_px > 0, gt_px, 1.0), 0.0), gt_px > 0)
        reports.append(compute_metrics(pred, gt, r))
    return reports


def predict_set(model, samples: Sequence, view: str = "left", use_pp: bool = False, channel: int = 0) -> list[np.ndarray]:
    out = []
    predict = model.predictor(view, channel) if hasattr(model, "predictor") else model
    for s in samples:
        img = (s.left if view == "left" else s.right)[None]
        d = post_process(predict, img) if use_pp else predict(img)
        out.append(np.asarray(d)[0, 0])
    return out


def evaluate_set(model, samples: Sequence, rig: CameraRig, use_pp: bool = False, view: str = "left", channel: int = 0) -> MetricsReport:
    """Mean-over-images metrics of ``model`` (a DualModel or an image -> disparity callable)."""
    if not samples:
        raise ValueError("evaluate_set needs at least one sample")
    return aggregate(evaluate_predictions(predict_set(model, samples, view, use_pp, channel), samples, rig))


def report_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(MetricsReport))
