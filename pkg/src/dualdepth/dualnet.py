"""Miniature encoder-decoder disparity networks and the dual (CNN-L, CNN-R) model.

Layer table for ``base_filters = F`` and ``encoder_depth = 4``::

    enc{k}   4x4 stride-2 conv  -> F*2^(k-1) channels, elu      k = 1..4
    enc{k}b  3x3 conv           -> same channels, elu
    up{k}    upsample2, 3x3 conv -> channels of enc{k-1}, elu  k = 4..1
    iconv{k} concat skip, 3x3 conv, elu
    disp{k}  3x3 conv -> out_channels, sigmoid * d_max_frac    k = 4..1

The skip for ``k = 1`` is the input image itself. Only the last four
decoder stages carry disparity heads; deeper encoders add decoder stages
without heads.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .autodiff import ShapeError, Tensor, concat_channels, conv2d, elu, scale, select_channel, sigmoid, upsample2

NUM_SCALES = 4


@dataclass(frozen=True)
class NetworkConfig:
    input_channels: int = 3
    base_filters: int = 8
    encoder_depth: int = 4
    out_channels: int = 1
    d_max_frac: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.encoder_depth < NUM_SCALES:
            raise ValueError(f"encoder_depth must be >= {NUM_SCALES}")
        if self.out_channels not in (1, 2):
            raise ValueError("out_channels must be 1 (DNM6) or 2 (DNM12)")
        if not 0.0 < self.d_max_frac < 1.0:
            raise ValueError("d_max_frac must lie in (0, 1)")
        if self.input_channels < 1 or self.base_filters < 1:
            raise ValueError("input_channels and base_filters must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def layer_table(cfg: NetworkConfig) -> list[tuple[str, int, int, int, int, int]]:
    """(name, in_ch, out_ch, kernel, stride, padding) for every conv layer, in order."""
    F = cfg.base_filters
    widths = [cfg.input_channels] + [F * 2**k for k in range(cfg.encoder_depth)]
    layers = []
    for k in range(1, cfg.encoder_depth + 1):
        layers.append((f"enc{k}", widths[k - 1], widths[k], 4, 2, 1))
        layers.append((f"enc{k}b", widths[k], widths[k], 3, 1, 1))
    for k in range(cfg.encoder_depth, 0, -1):
        # up{k} maps encoder-stage-k resolution to stage k-1
        up_out = widths[k - 1] if k > 1 else F
        layers.append((f"up{k}", widths[k] if k == cfg.encoder_depth else _dec_width(cfg, k + 1), up_out, 3, 1, 1))
        layers.append((f"iconv{k}", up_out + widths[k - 1], _dec_width(cfg, k), 3, 1, 1))
        if k <= NUM_SCALES:
            layers.append((f"disp{k}", _dec_width(cfg, k), cfg.out_channels, 3, 1, 1))
    return layers


def _dec_width(cfg: NetworkConfig, k: int) -> int:
    # decoder stage k works at the resolution of encoder stage k-1
    return cfg.base_filters * 2 ** max(k - 2, 0)


def parameter_count(cfg: NetworkConfig) -> int:
    return sum(ci * co * ks * ks + co for _, ci, co, ks, _, _ in layer_table(cfg))


class NetworkParams:
    """Ordered kernels and biases of one network."""

    def __init__(self, cfg: NetworkConfig, arrays: dict[str, np.ndarray]):
        self.cfg = cfg
        self.arrays = dict(arrays)

    @property
    def names(self) -> list[str]:
        return list(self.arrays)

    @property
    def count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.cfg, {k: v.copy() for k, v in self.arrays.items()})

    def as_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}


def init_params(cfg: NetworkConfig, seed: int | None = None) -> NetworkParams:
    """Glorot-uniform kernels, zero biases, drawn from ``seed`` (default ``cfg.seed``)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    arrays = {}
    for name, ci, co, ks, _, _ in layer_table(cfg):
        fan_in, fan_out = ci * ks * ks, co * ks * ks
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[f"{name}.weight"] = rng.uniform(-bound, bound, size=(co, ci, ks, ks))
        arrays[f"{name}.bias"] = np.zeros(co)
    return NetworkParams(cfg, arrays)


def forward(params: dict[str, Tensor] | NetworkParams, image: Tensor, cfg: NetworkConfig | None = None) -> list[Tensor]:
    """Disparity pyramid for ``image``, full resolution first."""
    if isinstance(params, NetworkParams):
        cfg = params.cfg
        params = params.as_tensors()
    if cfg is None:
        raise ValueError("forward needs a NetworkConfig")
    if image.values.ndim != 4 or image.shape[1] != cfg.input_channels:
        raise ShapeError(f"expected a (b, {cfg.input_channels}, h, w) image, got {image.shape}")
    h, w = image.shape[2:]
    f = 2**cfg.encoder_depth
    if h % f or w % f:
        raise ShapeError(f"image extents {h}x{w} must be divisible by {f}")

    spec = {name: (stride, pad) for name, _, _, _, stride, pad in layer_table(cfg)}

    def conv(name, x):
        stride, pad = spec[name]
        return conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride, padding=pad)

    skips = [image]
    x = image
    for k in range(1, cfg.encoder_depth + 1):
        x = elu(conv(f"enc{k}", x))
        x = elu(conv(f"enc{k}b", x))
        skips.append(x)

    pyramid = []
    for k in range(cfg.encoder_depth, 0, -1):
        x = elu(conv(f"up{k}", upsample2(x)))
        x = elu(conv(f"iconv{k}", concat_channels([x, skips[k - 1]])))
        if k <= NUM_SCALES:
            pyramid.append(scale(sigmoid(conv(f"disp{k}", x)), cfg.d_max_frac))
    return pyramid[::-1]


class DualModel:
    """Two independently parameterized networks sharing one configuration.

    ``kind`` is 6 (one disparity channel per network) or 12 (two channels:
    channel 0 the network's own view, channel 1 the opposite view).
    """

    def __init__(self, kind: int, cfg: NetworkConfig, params_l: NetworkParams, params_r: NetworkParams):
        if kind not in (6, 12):
            raise ValueError("kind must be 6 or 12")
        if cfg.out_channels != (1 if kind == 6 else 2):
            raise ValueError(f"DNM{kind} needs out_channels={1 if kind == 6 else 2}")
        self.kind = kind
        self.cfg = cfg
        self.params_l = params_l
        self.params_r = params_r

    @classmethod
    def create(cls, kind: int, cfg: NetworkConfig | None = None, **overrides) -> "DualModel":
        cfg = cfg or NetworkConfig(out_channels=1 if kind == 6 else 2, **overrides)
        # distinct streams so CNN-L and CNN-R never start identical
        return cls(kind, cfg, init_params(cfg, seed=2 * cfg.seed), init_params(cfg, seed=2 * cfg.seed + 1))

    def networks(self) -> dict[str, NetworkParams]:
        return {"L": self.params_l, "R": self.params_r}

    def predict_disparity(self, image, view: str = "left", channel: int = 0) -> np.ndarray:
        """Full-resolution disparity (width fractions) as a (b, 1, h, w) array."""
        if view not in ("left", "right"):
            raise ValueError("view must be 'left' or 'right'")
        if not 0 <= channel < self.cfg.out_channels:
            raise ValueError(f"channel must be in [0, {self.cfg.out_channels})")
        params = self.params_l if view == "left" else self.params_r
        img = image if isinstance(image, Tensor) else Tensor(image)
        return select_channel(forward(params, img)[0], channel).values

    def predictor(self, view: str = "left", channel: int = 0) -> Callable[[np.ndarray], np.ndarray]:
        return lambda img: self.predict_disparity(img, view, channel)
