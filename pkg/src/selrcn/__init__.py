"""Squeeze-and-excitation recurrent video classifier on a tape-based autodiff core."""

from .autodiff import (DimensionError, GradientError, Tape, Tensor, backward,
                       global_avg_pool)
from .checkpoint import Checkpoint, CheckpointFormatError, checkpoint_load, checkpoint_save
from .estimator import VideoActionClassifier, VideoFeatureExtractor
from .gradcheck import grad_check
from .lstm import SELSTM, SELSTMConfig, late_fuse, lstm_cell_step
from .optim import Adam, AdamState, adam_step
from .pipeline import (AugmentConfig, Segment, SegmentSpec, VideoSample, augment_segment,
                       resize_short_side, segment_video)
from .resnet import SEResNet, extract_video_features, resnet34_config, tiny_config
from .se import (SEConfig, excitation, reweight_residual, reweight_sequence,
                 squeeze_channels, squeeze_frames, squeeze_spatial)
from .training import (Metrics, SELRCNModel, TrainConfig, ablation_grid, evaluate,
                       restore_model, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AdamState", "AugmentConfig", "Checkpoint", "CheckpointFormatError",
    "DimensionError", "GradientError", "Metrics", "SEConfig", "SELRCNModel", "SELSTM",
    "SELSTMConfig", "SEResNet", "Segment", "SegmentSpec", "Tape", "Tensor",
    "TrainConfig", "VideoActionClassifier", "VideoFeatureExtractor", "VideoSample",
    "ablation_grid", "adam_step", "augment_segment", "backward", "checkpoint_load",
    "checkpoint_save", "evaluate", "excitation", "extract_video_features",
    "global_avg_pool", "grad_check", "late_fuse", "lstm_cell_step", "resize_short_side",
    "resnet34_config", "restore_model", "reweight_residual", "reweight_sequence",
    "segment_video", "squeeze_channels", "squeeze_frames", "squeeze_spatial", "tiny_config",
    "train",
]
