"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np

from .trainer import StereoSample


def check_images(X, multiple: int = 1, channels: tuple[int, ...] = (1, 3)) -> np.ndarray:
    """Return ``X`` as a finite float64 (n, c, h, w) array.

    A single (c, h, w) image is promoted to a batch of one.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected images shaped (n, c, h, w), got {X.shape}")
    if X.shape[1] not in channels:
        raise ValueError(f"images need {' or '.join(map(str, channels))} channels, got {X.shape[1]}")
    h, w = X.shape[2:]
    if h % multiple or w % multiple:
        raise ValueError(f"image extents {h}x{w} must be divisible by {multiple}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain NaN or infinite values")
    return X


def check_stereo_pairs(X, y=None, multiple: int = 16) -> list[StereoSample]:
    """Normalize training input to a list of StereoSamples.

    Accepts a sequence of StereoSample, or an array shaped (n, 2, c, h, w)
    with the left view at index 0. ``y``, if given, is ground-truth disparity
    in width fractions shaped (n, h, w) or (n, 1, h, w).
    """
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], StereoSample):
        samples = list(X)
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 5 or arr.shape[1] != 2:
            raise ValueError(f"expected stereo pairs shaped (n, 2, c, h, w), got {arr.shape}")
        check_images(arr[:, 0], multiple)
        check_images(arr[:, 1], multiple)
        gt = None
        if y is not None:
            gt = np.asarray(y, dtype=np.float64).reshape(arr.shape[0], 1, *arr.shape[3:])
        samples = [StereoSample(arr[i, 0], arr[i, 1], None if gt is None else gt[i]) for i in range(arr.shape[0])]
    if not samples:
        raise ValueError("no stereo pairs given")
    shape = samples[0].left.shape
    for s in samples:
        if s.left.shape != shape:
            raise ValueError("all stereo pairs must share extents")
    if shape[1] % multiple or shape[2] % multiple:
        raise ValueError(f"pair extents {shape[1:]} must be divisible by {multiple}")
    return samples
