"""Scikit-learn style front door.

`VideoActionClassifier` wraps the full training loop behind fit/predict so the
model slots into sklearn tooling (get_params/set_params, score, grid search
over its constructor arguments). X is a sequence of (T, 3, H, W) float videos
in [0, 1]; frame counts may vary per video.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .autodiff import Tensor
from .checkpoint import Checkpoint
from .pipeline import VideoSample
from .resnet import extract_video_features
from .training import (SELRCNModel, TrainConfig, evaluate, restore_model, train)
from .validation import check_fitted, check_labels, check_videos


class VideoActionClassifier(ClassifierMixin, BaseEstimator):
    """Squeeze-excitation recalibrated CNN+LSTM video classifier."""

    def __init__(self, preset: str = "tiny", epochs: int = 16, learning_rate: float = 1e-5,
                 batch_size: int = 28, lr_decay: float = 0.9, dropout: float = 0.5,
                 se_spatial: bool = True, se_temporal: bool = True,
                 squeeze_axis: str = "frame", reweight: str = "residual",
                 lstm_layers: int | None = None, hidden_units: int | None = None,
                 fusion: str = "mean", supervision: str = "all_frames",
                 validation_fraction: float = 0.0, seed: int = 0, dtype: str = "float32"):
        self.preset = preset
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.lr_decay = lr_decay
        self.dropout = dropout
        self.se_spatial = se_spatial
        self.se_temporal = se_temporal
        self.squeeze_axis = squeeze_axis
        self.reweight = reweight
        self.lstm_layers = lstm_layers
        self.hidden_units = hidden_units
        self.fusion = fusion
        self.supervision = supervision
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.dtype = dtype

    def _train_config(self, class_count: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate,
            batch_size=self.batch_size, lr_decay=self.lr_decay, dropout=self.dropout,
            seed=self.seed, preset=self.preset, se_spatial=self.se_spatial,
            se_temporal=self.se_temporal, squeeze_axis=self.squeeze_axis,
            reweight=self.reweight, lstm_layers=self.lstm_layers,
            hidden_units=self.hidden_units, class_count=class_count,
            dtype=self.dtype, supervision=self.supervision, fusion=self.fusion)

    def fit(self, X, y) -> "VideoActionClassifier":
        videos = check_videos(X)
        y = check_labels(y, len(videos))
        self.classes_, encoded = np.unique(y, return_inverse=True)
        samples = [VideoSample(frames=v, label=int(c), id=f"x{i:05d}")
                   for i, (v, c) in enumerate(zip(videos, encoded))]
        if self.validation_fraction > 0.0:
            rng = np.random.default_rng([self.seed & 0xFFFFFFFFFFFFFFFF, 0xA1])
            order = rng.permutation(len(samples))
            n_eval = max(1, int(round(self.validation_fraction * len(samples))))
            eval_set = [samples[i] for i in order[:n_eval]]
            train_set = [samples[i] for i in order[n_eval:]]
        else:
            train_set, eval_set = samples, None
        cfg = self._train_config(class_count=len(self.classes_))
        self.checkpoint_, self.metrics_ = train(cfg, train_set, eval_set)
        self.model_ = restore_model(self.checkpoint_)
        return self

    def _as_samples(self, X) -> list[VideoSample]:
        videos = check_videos(X)
        return [VideoSample(frames=v, label=0, id=f"q{i:05d}") for i, v in enumerate(videos)]

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self, "model_")
        samples = self._as_samples(X)
        result = evaluate(self.model_, samples)
        return np.stack([result.fused[s.id] for s in samples])

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]


class VideoFeatureExtractor(TransformerMixin, BaseEstimator):
    """Per-frame pooled CNN features as a transformer: videos -> (T, C) arrays.

    Stateless apart from the seeded (or checkpoint-restored) extractor weights,
    so fit only materializes the model.
    """

    def __init__(self, preset: str = "tiny", se_spatial: bool = True, seed: int = 0,
                 checkpoint: Checkpoint | None = None):
        self.preset = preset
        self.se_spatial = se_spatial
        self.seed = seed
        self.checkpoint = checkpoint

    def fit(self, X=None, y=None) -> "VideoFeatureExtractor":
        if self.checkpoint is not None:
            self.model_ = restore_model(self.checkpoint)
        else:
            cfg = TrainConfig(preset=self.preset, seed=self.seed,
                              se_spatial=self.se_spatial)
            self.model_ = SELRCNModel(cfg)
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_fitted(self, "model_")
        videos = check_videos(X)
        out = []
        for video in videos:
            feats = extract_video_features(Tensor(video), self.model_.resnet)
            out.append(feats.data)
        return out
