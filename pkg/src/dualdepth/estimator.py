"""scikit-learn style wrapper around dual-network training and inference."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dualnet import NetworkConfig
from .evaluation import CameraRig, disparity_to_depth, evaluate_predictions, post_process
from .objectives import LossWeights
from .trainer import StereoSample, TrainConfig, train
from .validation import check_images, check_stereo_pairs


class DualDepthEstimator(BaseEstimator):
    """Unsupervised monocular disparity estimator trained on rectified stereo pairs.

    ``fit`` takes stereo pairs (ground truth, if passed, is ignored).
    ``predict`` takes single images and returns disparity as a fraction of
    image width, shaped (n, h, w).

    Parameters mirror :class:`~dualdepth.trainer.TrainConfig`; ``view``,
    ``channel`` and ``use_pp`` control inference.
    """

    def __init__(
        self,
        model_kind="dnm6",
        epochs=50,
        steps_per_epoch=100,
        batch_size=2,
        alpha=0.85,
        alpha_ap=1.0,
        alpha_ds=0.1,
        alpha_lr=1.0,
        lr_phase1=1e-4,
        lr_phase2=0.5e-4,
        lr_phase3=0.25e-4,
        phase_boundaries=(30, 40),
        augment_photometric=True,
        augment_flip=True,
        smoothness_weight_source="network-input",
        base_filters=8,
        d_max_frac=0.3,
        view="left",
        channel=0,
        use_pp=False,
        seed=0,
    ):
        self.model_kind = model_kind
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.alpha = alpha
        self.alpha_ap = alpha_ap
        self.alpha_ds = alpha_ds
        self.alpha_lr = alpha_lr
        self.lr_phase1 = lr_phase1
        self.lr_phase2 = lr_phase2
        self.lr_phase3 = lr_phase3
        self.phase_boundaries = phase_boundaries
        self.augment_photometric = augment_photometric
        self.augment_flip = augment_flip
        self.smoothness_weight_source = smoothness_weight_source
        self.base_filters = base_filters
        self.d_max_frac = d_max_frac
        self.view = view
        self.channel = channel
        self.use_pp = use_pp
        self.seed = seed

    def train_config(self, input_channels: int = 3) -> TrainConfig:
        out_channels = 1 if self.model_kind == "dnm6" else 2
        return TrainConfig(
            model_kind=self.model_kind,
            epochs=self.epochs,
            steps_per_epoch=self.steps_per_epoch,
            batch_size=self.batch_size,
            weights=LossWeights(self.alpha, self.alpha_ap, self.alpha_ds, self.alpha_lr),
            lr_phase1=self.lr_phase1,
            lr_phase2=self.lr_phase2,
            lr_phase3=self.lr_phase3,
            phase_boundaries=tuple(self.phase_boundaries),
            augment_photometric=self.augment_photometric,
            augment_flip=self.augment_flip,
            smoothness_weight_source=self.smoothness_weight_source,
            network=NetworkConfig(
                input_channels=input_channels,
                base_filters=self.base_filters,
                out_channels=out_channels,
                d_max_frac=self.d_max_frac,
                seed=self.seed,
            ),
            seed=self.seed,
        )

    def fit(self, X, y=None):
        samples = check_stereo_pairs(X)
        cfg = self.train_config(samples[0].left.shape[0])
        self.model_, self.history_ = train(cfg, samples)
        self.n_channels_in_ = samples[0].left.shape[0]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_images(X, multiple=2**self.model_.cfg.encoder_depth, channels=(self.n_channels_in_,))
        predict = self.model_.predictor(self.view, self.channel)
        out = post_process(predict, X) if self.use_pp else predict(X)
        return out[:, 0]

    def predict_depth(self, X, rig: CameraRig, min_disp_px: float = 0.01) -> np.ndarray:
        disp = self.predict(X)
        return disparity_to_depth(disp, rig, min_disp_px, width=disp.shape[-1]).depth

    def score(self, X, y, rig: CameraRig | None = None) -> float:
        """Negative mean absolute relative depth error against width-fraction ground truth ``y``."""
        X = check_images(X)
        y = np.asarray(y, dtype=np.float64).reshape(X.shape[0], 1, *X.shape[2:])
        rig = rig or CameraRig(focal_px=X.shape[-1], baseline_m=1.0)
        samples = [StereoSample(x, x, gt) for x, gt in zip(X, y)]
        reports = evaluate_predictions(list(self.predict(X)), samples, rig)
        return -float(np.mean([r.abs_rel for r in reports]))
