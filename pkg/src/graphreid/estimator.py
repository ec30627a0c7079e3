"""Scikit-learn style wrapper around the graph re-id pipeline.

``fit`` trains the network on labeled clips; ``transform`` maps clips to
retrieval embeddings (the inference representation); ``predict`` returns
identity labels via the trained classifier head. X is a pair of arrays
(features, heatmaps) because a clip is two aligned tensors, not a flat
vector.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from graphreid import config as cfgmod
from graphreid.partition import NUM_KEYPOINTS
from graphreid.synth import Dataset
from graphreid.train import train as run_training


def validate_clip_arrays(X, channels=None, frames=None):
    """Check and unpack X = (features, heatmaps).

    features: (N, T, H, W, C); heatmaps: (N, T, 17, H, W). Returns the two
    arrays as float32 with all values finite.
    """
    if not isinstance(X, (tuple, list)) or len(X) != 2:
        raise ValueError(
            "X must be a (features, heatmaps) pair of arrays")
    features = np.asarray(X[0], dtype=np.float32)
    heatmaps = np.asarray(X[1], dtype=np.float32)
    if features.ndim != 5:
        raise ValueError(
            f"features must be (N, T, H, W, C), got shape {features.shape}")
    if heatmaps.ndim != 5:
        raise ValueError(
            f"heatmaps must be (N, T, {NUM_KEYPOINTS}, H, W), "
            f"got shape {heatmaps.shape}")
    n, t, h, w, c = features.shape
    if heatmaps.shape != (n, t, NUM_KEYPOINTS, h, w):
        raise ValueError(
            f"heatmaps shape {heatmaps.shape} does not align with "
            f"features shape {features.shape}")
    if channels is not None and c != channels:
        raise ValueError(f"expected {channels} channels, got {c}")
    if frames is not None and t != frames:
        raise ValueError(f"expected {frames} frames per clip, got {t}")
    if not np.isfinite(features).all():
        raise ValueError("features contain NaN or Inf")
    if not np.isfinite(heatmaps).all():
        raise ValueError("heatmaps contain NaN or Inf")
    return features, heatmaps


def validate_labels(y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    return y


class PartGraphReid(BaseEstimator, TransformerMixin):
    """Video re-id embedder with the estimator interface.

    Parameters mirror the run configuration keys; anything not exposed
    here keeps its configuration default.
    """

    def __init__(self, channels=40, frames=6, tau=3, num_layers=2,
                 alpha=0.3, cs_scales="s1+s2+s3", use_physical=True,
                 use_mask=True, use_context=True, margin=0.3, epsilon=0.1,
                 lr=3e-4, weight_decay=5e-4, steps=200,
                 batch_identities=8, clips_per_identity=4, seed=0,
                 eval_metric="cosine", verbose=False):
        self.channels = channels
        self.frames = frames
        self.tau = tau
        self.num_layers = num_layers
        self.alpha = alpha
        self.cs_scales = cs_scales
        self.use_physical = use_physical
        self.use_mask = use_mask
        self.use_context = use_context
        self.margin = margin
        self.epsilon = epsilon
        self.lr = lr
        self.weight_decay = weight_decay
        self.steps = steps
        self.batch_identities = batch_identities
        self.clips_per_identity = clips_per_identity
        self.seed = seed
        self.eval_metric = eval_metric
        self.verbose = verbose

    def _config(self):
        return cfgmod.default_run_config(
            channels=self.channels, frames=self.frames, tau=self.tau,
            num_layers=self.num_layers, alpha=self.alpha,
            cs_scales=self.cs_scales, use_physical=self.use_physical,
            use_mask=self.use_mask, use_context=self.use_context,
            margin=self.margin, epsilon=self.epsilon, lr=self.lr,
            weight_decay=self.weight_decay, steps=self.steps,
            batch_identities=self.batch_identities,
            clips_per_identity=self.clips_per_identity, seed=self.seed,
            eval_metric=self.eval_metric)

    def fit(self, X, y, cameras=None):
        """Train on labeled clips.

        X: (features, heatmaps) pair; y: identity labels; cameras:
        optional camera ids (stored for evaluation splits, not used
        during optimization).
        """
        features, heatmaps = validate_clip_arrays(
            X, channels=self.channels, frames=self.frames)
        y = validate_labels(y, features.shape[0])
        if cameras is None:
            cameras = np.zeros(features.shape[0], dtype=np.int64)
        cameras = validate_labels(cameras, features.shape[0])
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("training needs at least 2 identities")
        dataset = Dataset(features, heatmaps, encoded, cameras)
        log = print if self.verbose else None
        cfg = self._config()
        self.model_, self.optimizer_, self.history_ = run_training(
            cfg, dataset, log=log)
        self.config_ = cfg
        self.n_features_in_ = features.shape[-1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this PartGraphReid instance is not fitted yet; "
                "call fit before transform/predict")

    def transform(self, X):
        """Clips -> retrieval embeddings (N, channels)."""
        self._check_fitted()
        features, heatmaps = validate_clip_arrays(
            X, channels=self.channels, frames=self.frames)
        self.model_.eval()
        chunks = []
        for start in range(0, features.shape[0], 16):
            stop = min(start + 16, features.shape[0])
            chunks.append(self.model_.embed(features[start:stop],
                                            heatmaps[start:stop]))
        return np.concatenate(chunks, axis=0)

    def predict(self, X):
        """Clips -> identity labels (classifier over the inference branch)."""
        self._check_fitted()
        features, heatmaps = validate_clip_arrays(
            X, channels=self.channels, frames=self.frames)
        self.model_.eval()
        predictions = []
        for start in range(0, features.shape[0], 16):
            stop = min(start + 16, features.shape[0])
            _, v_f_a, _ = self.model_.all_branches(features[start:stop],
                                                   heatmaps[start:stop])
            logits = self.model_.head.classifiers[1](v_f_a)
            predictions.append(logits.data.argmax(axis=1))
        encoded = np.concatenate(predictions)
        return self.classes_[encoded]

    def score(self, X, y):
        """Mean identity-classification accuracy (diagnostic)."""
        return float(np.mean(self.predict(X) == np.asarray(y)))
