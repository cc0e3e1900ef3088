"""Synthetic stereo scenes, augmentation, the learning-rate schedule, Adam, and the training loop."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .dualnet import DualModel, NetworkConfig, forward
from .evaluation import CameraRig
from .objectives import SMOOTHNESS_SOURCES, LossBreakdown, LossWeights, total_cost_dnm6, total_cost_dnm12
from .stereo_ops import RIGHTWARD, build_pyramid, warp_horizontal

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """A loss or gradient became non-finite."""


# scenes ------------------------------------------------------------------

@dataclass
class StereoSample:
    left: np.ndarray  # (c, h, w)
    right: np.ndarray
    gt_disparity: np.ndarray | None = None  # (1, h, w), width fractions
    rig: CameraRig | None = None

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError(f"left {self.left.shape} and right {self.right.shape} differ")
        if self.gt_disparity is not None:
            if self.gt_disparity.shape != (1, *self.left.shape[1:]):
                raise ValueError("ground-truth disparity must be (1, h, w)")
            if np.any(self.gt_disparity < 0):
                raise ValueError("ground-truth disparity must be non-negative")


@dataclass(frozen=True)
class SceneSpec:
    """A synthetic rectified pair.

    Disparity is constant along each row, so the left- and right-view
    ground truth coincide. ``two-plane`` puts ``disparity_px[0]`` on the top
    half and ``disparity_px[1]`` on the bottom half; ``slanted`` ramps
    linearly from the first value at the top row to the second at the bottom.
    """

    profile: str = "constant"
    disparity_px: tuple[float, ...] = (4.0,)
    texture: str = "smoothed-noise"
    height: int = 64
    width: int = 128
    channels: int = 3
    seed: int = 0
    d_max_frac: float = 0.3


PROFILES = ("constant", "two-plane", "slanted")
TEXTURES = ("random-noise", "smoothed-noise", "checkers")


def _box_blur(x: np.ndarray, radius: int, passes: int = 3) -> np.ndarray:
    """Repeated separable box blur with wrap-around borders (approximately Gaussian)."""
    for _ in range(passes):
        for axis in (-1, -2):
            acc = np.zeros_like(x)
            for s in range(-radius, radius + 1):
                acc += np.roll(x, s, axis=axis)
            x = acc / (2 * radius + 1)
    return x


def make_texture(kind: str, channels: int, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "random-noise":
        return rng.uniform(size=(channels, height, width))
    if kind == "smoothed-noise":
        # octave amplitude grows with blur radius (1/f-like spectrum): coarse
        # structure keeps the photometric loss monotone over ~25 px of error
        t = 0.0
        for r in (1, 2, 4, 8, 16):
            octave = _box_blur(rng.uniform(size=(channels, height, width)), radius=r)
            t = t + r * (octave - octave.mean()) / octave.std()
        lo = t.min(axis=(1, 2), keepdims=True)
        hi = t.max(axis=(1, 2), keepdims=True)
        return (t - lo) / np.maximum(hi - lo, 1e-12)
    if kind == "checkers":
        cell = int(rng.integers(4, 9))
        ys, xs = np.mgrid[0:height, 0:width]
        board = ((ys // cell + xs // cell) % 2).astype(np.float64)
        tint = rng.uniform(0.2, 0.8, size=(channels, 1, 1))
        return 0.1 + 0.8 * board[None] * tint + 0.1 * (1 - board[None]) * tint
    raise ValueError(f"unknown texture {kind!r}; expected one of {TEXTURES}")


def disparity_profile(spec: SceneSpec) -> np.ndarray:
    """Per-pixel disparity in pixels, (h, w)."""
    h, w = spec.height, spec.width
    d = [float(v) for v in spec.disparity_px]
    if spec.profile == "constant":
        rows = np.full(h, d[0])
    elif spec.profile == "two-plane":
        if len(d) != 2:
            raise ValueError("two-plane needs two disparity values")
        rows = np.where(np.arange(h) < h // 2, d[0], d[1])
    elif spec.profile == "slanted":
        if len(d) != 2:
            raise ValueError("slanted needs two disparity values")
        rows = np.linspace(d[0], d[1], h)
    else:
        raise ValueError(f"unknown profile {spec.profile!r}; expected one of {PROFILES}")
    return np.repeat(rows[:, None], w, axis=1)


def generate_scene(spec: SceneSpec) -> StereoSample:
    """Textured left image; right(x) = left sampled at x + d(x)*w along each row."""
    d_px = disparity_profile(spec)
    if np.any(d_px < 0) or np.any(d_px >= spec.d_max_frac * spec.width):
        raise ValueError(
            f"disparities must lie in [0, {spec.d_max_frac * spec.width:g}) px, got {d_px.min():g}..{d_px.max():g}"
        )
    rng = np.random.default_rng(spec.seed)
    left = make_texture(spec.texture, spec.channels, spec.height, spec.width, rng)
    disp = (d_px / spec.width)[None]
    right = warp_horizontal(Tensor(left[None]), Tensor(disp[None]), RIGHTWARD).values[0]
    return StereoSample(left, right, disp)


def generate_scene_set(spec: SceneSpec, count: int) -> list[StereoSample]:
    return [generate_scene(replace(spec, seed=spec.seed + i)) for i in range(count)]


# augmentation ------------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    gamma: float = 1.0
    brightness: float = 1.0
    color: tuple[float, ...] = (1.0, 1.0, 1.0)
    flip: bool = False


def draw_augmentation(rng: np.random.Generator, channels: int = 3, photometric: bool = True, flip: bool = True) -> AugmentParams:
    # draws happen unconditionally so the stream does not depend on the flags
    gamma = rng.uniform(0.8, 1.2)
    brightness = rng.uniform(0.8, 1.2)
    color = tuple(rng.uniform(0.95, 1.05, size=channels))
    do_flip = bool(rng.uniform() < 0.5)
    if not photometric:
        gamma, brightness, color = 1.0, 1.0, (1.0,) * channels
    return AugmentParams(gamma, brightness, color, do_flip and flip)


def apply_augmentation(sample: StereoSample, p: AugmentParams) -> StereoSample:
    """Same photometric change on both views; a flip mirrors and swaps the views."""
    left, right = sample.left, sample.right
    if (p.gamma, p.brightness) != (1.0, 1.0) or any(c != 1.0 for c in p.color):
        color = np.asarray(p.color[: left.shape[0]])[:, None, None]

        def photometric(img):
            return np.clip(img**p.gamma * p.brightness * color, 0.0, 1.0)

        left, right = photometric(left), photometric(right)
    gt = sample.gt_disparity
    if p.flip:
        left, right = right[..., ::-1].copy(), left[..., ::-1].copy()
        gt = None if gt is None else gt[..., ::-1].copy()
    return StereoSample(left, right, gt, sample.rig)


def augment(sample: StereoSample, rng: np.random.Generator, photometric: bool = True, flip: bool = True) -> StereoSample:
    return apply_augmentation(sample, draw_augmentation(rng, sample.left.shape[0], photometric, flip))


# schedule and optimizer --------------------------------------------------

@dataclass
class TrainConfig:
    model_kind: str = "dnm6"
    epochs: int = 50
    steps_per_epoch: int = 100
    batch_size: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    lr_phase1: float = 1e-4
    lr_phase2: float = 0.5e-4
    lr_phase3: float = 0.25e-4
    phase_boundaries: tuple[int, int] = (30, 40)
    augment_photometric: bool = True
    augment_flip: bool = True
    smoothness_weight_source: str = "network-input"
    network: NetworkConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.model_kind not in ("dnm6", "dnm12"):
            raise ValueError("model_kind must be 'dnm6' or 'dnm12'")
        if self.epochs < 0 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs >= 0, steps_per_epoch >= 1 and batch_size >= 1 required")
        if min(self.lr_phase1, self.lr_phase2, self.lr_phase3) <= 0:
            raise ValueError("learning rates must be positive")
        b1, b2 = self.phase_boundaries
        if not 0 <= b1 <= b2 <= self.epochs:
            raise ValueError(f"phase boundaries {self.phase_boundaries} must be ascending and <= epochs")
        if self.smoothness_weight_source not in SMOOTHNESS_SOURCES:
            raise ValueError(f"smoothness_weight_source must be one of {SMOOTHNESS_SOURCES}")
        if self.network is None:
            self.network = NetworkConfig(out_channels=self.out_channels, seed=self.seed)
        elif self.network.out_channels != self.out_channels:
            raise ValueError(f"{self.model_kind} needs network.out_channels={self.out_channels}")

    @property
    def kind(self) -> int:
        return 6 if self.model_kind == "dnm6" else 12

    @property
    def out_channels(self) -> int:
        return 1 if self.model_kind == "dnm6" else 2

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["phase_boundaries"] = list(self.phase_boundaries)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "weights" in data:
            data["weights"] = _strict(LossWeights, data["weights"])
        if data.get("network") is not None:
            data["network"] = _strict(NetworkConfig, data["network"])
        if "phase_boundaries" in data:
            data["phase_boundaries"] = tuple(data["phase_boundaries"])
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _strict(klass, data: dict):
    known = {f.name for f in dataclasses.fields(klass)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
    return klass(**data)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    b1, b2 = cfg.phase_boundaries
    if epoch < b1:
        return cfg.lr_phase1
    if epoch < b2:
        return cfg.lr_phase2
    return cfg.lr_phase3


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        """Update ``params`` in place. Raises NumericalError before touching anything on a non-finite gradient."""
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, state: Adam, lr: float) -> Adam:
    state.step(params, grads, lr)
    return state


# training ----------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    breakdown: LossBreakdown


def stack_batch(samples: Sequence[StereoSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.left for s in samples]), np.stack([s.right for s in samples])


def compute_loss(model: DualModel, tensors: dict[str, dict[str, Tensor]], left: np.ndarray, right: np.ndarray, cfg: TrainConfig) -> LossBreakdown:
    """Forward both networks on a batch and assemble the total cost."""
    img_l, img_r = Tensor(left), Tensor(right)
    disp_l = forward(tensors["L"], img_l, model.cfg)
    disp_r = forward(tensors["R"], img_r, model.cfg)
    pyr_l = build_pyramid(img_l, len(disp_l))
    pyr_r = build_pyramid(img_r, len(disp_r))
    if model.kind == 6:
        return total_cost_dnm6(pyr_l, pyr_r, disp_l, disp_r, cfg.weights)
    return total_cost_dnm12(pyr_l, pyr_r, disp_l, disp_r, cfg.weights, cfg.smoothness_weight_source)


def train_step(model: DualModel, optimizer: Adam, left: np.ndarray, right: np.ndarray, cfg: TrainConfig, lr: float) -> LossBreakdown:
    tensors = {net: p.as_tensors(requires_grad=True) for net, p in model.networks().items()}
    with Tape() as tape:
        breakdown = compute_loss(model, tensors, left, right, cfg)
        total = breakdown.total.item()
        if not math.isfinite(total):
            raise NumericalError(f"non-finite loss {total}")
        tape.backward(breakdown.total)
    params, grads = {}, {}
    for net, p in model.networks().items():
        for name, t in tensors[net].items():
            key = f"{net}.{name}"
            params[key] = p.arrays[name]
            grads[key] = t.grad if t.grad is not None else np.zeros_like(t.values)
    optimizer.step(params, grads, lr)
    return breakdown.as_floats()


def train(
    cfg: TrainConfig,
    data: Sequence[StereoSample],
    checkpoint_dir: str | Path | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
    model: DualModel | None = None,
) -> tuple[DualModel, list[StepRecord]]:
    """Jointly train CNN-L and CNN-R on ``data``.

    Each epoch visits the samples in a seeded random order, ``batch_size``
    at a time (wrapping around), for ``steps_per_epoch`` steps. When
    ``checkpoint_dir`` is given the initial model and the model after each
    epoch are written there; a non-finite loss aborts with those files intact.
    """
    from .io import save_checkpoint

    if not data:
        raise ValueError("training needs at least one sample")
    shape = data[0].left.shape
    if any(s.left.shape != shape for s in data):
        raise ValueError("all samples must share extents")
    if shape[1] % 16 or shape[2] % 16:
        raise ValueError(f"sample extents {shape[1:]} must be divisible by 16")

    rng = np.random.default_rng(cfg.seed)
    model = model or DualModel.create(cfg.kind, cfg.network)
    optimizer = Adam()
    history: list[StepRecord] = []
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, ckpt / "epoch_000.dnmc")

    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        order = rng.permutation(len(data))
        cursor = 0
        for _ in range(cfg.steps_per_epoch):
            batch = []
            for _ in range(cfg.batch_size):
                batch.append(augment(data[order[cursor % len(order)]], rng, cfg.augment_photometric, cfg.augment_flip))
                cursor += 1
            left, right = stack_batch(batch)
            breakdown = train_step(model, optimizer, left, right, cfg, lr)
            record = StepRecord(step, epoch, lr, breakdown)
            history.append(record)
            if on_step is not None:
                on_step(record)
            step += 1
        log.info("epoch %d lr %.3g loss %.6f", epoch, lr, history[-1].breakdown.total)
        if ckpt is not None:
            save_checkpoint(model, ckpt / f"epoch_{epoch + 1:03d}.dnmc")
    return model, history

