"""Residual CNN feature extractor with squeeze-excitation on its last block.

Two presets: the full 34-layer layout (stages [3,4,6,3], channels
[64,128,256,512], 7x7/2 stem plus 3x3/2 max reduction) and a desk-scale tiny
layout ([1,1,1,1], [8,16,32,64], 3x3/1 stem). Per-frame features are the
global average pool of the final maps; the classifier head lives elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import se
from .autodiff import DimensionError, Tensor


@dataclass
class SEResNetConfig:
    stage_blocks: tuple[int, int, int, int]
    stage_channels: tuple[int, int, int, int]
    stem_kernel: int
    stem_stride: int
    stem_pool: bool
    se_enabled: bool = True
    se_reduction: int = 16
    in_channels: int = 3

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[-1]


def resnet34_config(se_enabled: bool = True) -> SEResNetConfig:
    return SEResNetConfig(stage_blocks=(3, 4, 6, 3), stage_channels=(64, 128, 256, 512),
                          stem_kernel=7, stem_stride=2, stem_pool=True,
                          se_enabled=se_enabled)


def tiny_config(se_enabled: bool = True) -> SEResNetConfig:
    return SEResNetConfig(stage_blocks=(1, 1, 1, 1), stage_channels=(8, 16, 32, 64),
                          stem_kernel=3, stem_stride=1, stem_pool=False,
                          se_enabled=se_enabled)


def conv_weight(c_out: int, c_in: int, k: int, rng: np.random.Generator, dtype) -> Tensor:
    fan_in = c_in * k * k
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k))
    return Tensor(w.astype(dtype), requires_grad=True)


class BatchNorm:
    """Per-channel normalization: batch statistics while training, running
    statistics in evaluation mode."""

    def __init__(self, channels: int, dtype=np.float32, eps: float = 1e-5,
                 momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        c = x.shape[1]
        shape = (1, c) + (1,) * (x.ndim - 2)
        if training:
            y, mu, var = ad.batch_norm(x, self.gamma, self.beta, eps=self.eps)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean
                                 + m * mu).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var
                                + m * var).astype(self.running_var.dtype)
            return y
        gamma = ad.reshape(self.gamma, shape)
        beta = ad.reshape(self.beta, shape)
        mu = self.running_mean.reshape(shape)
        inv = 1.0 / np.sqrt(self.running_var.reshape(shape) + self.eps)
        y = ad.add(ad.mul(ad.mul(ad.sub(x, Tensor(mu)), Tensor(inv)), gamma), beta)
        return y

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}

    def named_buffers(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.running_mean": self.running_mean,
                f"{prefix}.running_var": self.running_var}

    def load_buffers(self, prefix: str, buffers: dict) -> None:
        self.running_mean = buffers[f"{prefix}.running_mean"].copy()
        self.running_var = buffers[f"{prefix}.running_var"].copy()


class BasicBlock:
    """Two 3x3 convs with shortcut; optional excitation gate on the branch.

    The gate rescales the residual branch before the shortcut addition, so for
    the last block the output is u_prev + s * branch(u_prev)."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator,
                 dtype=np.float32, se_cfg: se.SEConfig | None = None):
        self.stride = stride
        self.conv1 = conv_weight(c_out, c_in, 3, rng, dtype)
        self.bn1 = BatchNorm(c_out, dtype)
        self.conv2 = conv_weight(c_out, c_out, 3, rng, dtype)
        self.bn2 = BatchNorm(c_out, dtype)
        if stride != 1 or c_in != c_out:
            self.proj = conv_weight(c_out, c_in, 1, rng, dtype)
        else:
            self.proj = None
        self.se_cfg = se_cfg
        if se_cfg is not None:
            self.se_w1, self.se_w2 = se.init_excitation_weights(c_out, se_cfg, rng, dtype)
        else:
            self.se_w1 = self.se_w2 = None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        branch = ad.relu(self.bn1(ad.conv2d(x, self.conv1, stride=self.stride, pad=1), training))
        branch = self.bn2(ad.conv2d(branch, self.conv2, stride=1, pad=1), training)
        if self.se_cfg is not None:
            gate = se.excitation(se.squeeze_spatial(branch), self.se_w1, self.se_w2, self.se_cfg)
            branch = ad.mul(ad.reshape(gate, gate.shape + (1, 1)), branch)
        shortcut = x if self.proj is None else ad.conv2d(x, self.proj, stride=self.stride, pad=0)
        return ad.relu(ad.add(shortcut, branch))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        params = {f"{prefix}.conv1.weight": self.conv1, f"{prefix}.conv2.weight": self.conv2}
        params.update(self.bn1.named_params(f"{prefix}.bn1"))
        params.update(self.bn2.named_params(f"{prefix}.bn2"))
        if self.proj is not None:
            params[f"{prefix}.proj.weight"] = self.proj
        if self.se_cfg is not None:
            params[f"{prefix}.se.w1"] = self.se_w1
            params[f"{prefix}.se.w2"] = self.se_w2
        return params

    def named_buffers(self, prefix: str) -> dict[str, np.ndarray]:
        out = self.bn1.named_buffers(f"{prefix}.bn1")
        out.update(self.bn2.named_buffers(f"{prefix}.bn2"))
        return out

    def load_buffers(self, prefix: str, buffers: dict) -> None:
        self.bn1.load_buffers(f"{prefix}.bn1", buffers)
        self.bn2.load_buffers(f"{prefix}.bn2", buffers)


class SEResNet:
    """Stem, four residual stages, global average pooling."""

    def __init__(self, cfg: SEResNetConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        c0 = cfg.stage_channels[0]
        self.stem_conv = conv_weight(c0, cfg.in_channels, cfg.stem_kernel, rng, dtype)
        self.stem_bn = BatchNorm(c0, dtype)
        se_cfg = se.SEConfig(reduction_ratio=cfg.se_reduction, squeeze_axis="spatial") \
            if cfg.se_enabled else None
        self.stages: list[list[BasicBlock]] = []
        c_in = c0
        for s, (blocks, c_out) in enumerate(zip(cfg.stage_blocks, cfg.stage_channels)):
            stage = []
            for b in range(blocks):
                stride = 2 if (s > 0 and b == 0) else 1
                last = (s == len(cfg.stage_blocks) - 1 and b == blocks - 1)
                stage.append(BasicBlock(c_in, c_out, stride, rng, dtype,
                                        se_cfg=se_cfg if last else None))
                c_in = c_out
            self.stages.append(stage)

    def forward_maps(self, x: Tensor, training: bool = False) -> Tensor:
        """Feature maps before pooling: (N, 3, H, W) -> (N, C_last, H', W')."""
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise DimensionError(
                f"expected (N, {self.cfg.in_channels}, H, W) input, got {x.shape}")
        pad = self.cfg.stem_kernel // 2
        y = ad.relu(self.stem_bn(
            ad.conv2d(x, self.stem_conv, stride=self.cfg.stem_stride, pad=pad), training))
        if self.cfg.stem_pool:
            y = ad.max_pool2d(y, k=3, stride=2, pad=1)
        for stage in self.stages:
            for block in stage:
                y = block(y, training)
        return y

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        """Pooled per-frame features: (N, 3, H, W) -> (N, C_last)."""
        return ad.global_avg_pool(self.forward_maps(x, training))

    def named_params(self) -> dict[str, Tensor]:
        params = {"stem.conv.weight": self.stem_conv}
        params.update(self.stem_bn.named_params("stem.bn"))
        for s, stage in enumerate(self.stages):
            for b, block in enumerate(stage):
                params.update(block.named_params(f"stage{s}.block{b}"))
        return params

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = self.stem_bn.named_buffers("stem.bn")
        for s, stage in enumerate(self.stages):
            for b, block in enumerate(stage):
                out.update(block.named_buffers(f"stage{s}.block{b}"))
        return out

    def load_buffers(self, buffers: dict) -> None:
        self.stem_bn.load_buffers("stem.bn", buffers)
        for s, stage in enumerate(self.stages):
            for b, block in enumerate(stage):
                block.load_buffers(f"stage{s}.block{b}", buffers)


def conv_param_count(cfg: SEResNetConfig) -> int:
    """Closed-form weight count of every convolution in the configuration."""
    total = cfg.stage_channels[0] * cfg.in_channels * cfg.stem_kernel ** 2
    c_in = cfg.stage_channels[0]
    for s, (blocks, c_out) in enumerate(zip(cfg.stage_blocks, cfg.stage_channels)):
        for b in range(blocks):
            stride = 2 if (s > 0 and b == 0) else 1
            total += c_out * c_in * 9 + c_out * c_out * 9
            if stride != 1 or c_in != c_out:
                total += c_out * c_in
            c_in = c_out
    return total


def se_resnet_forward(frame: Tensor, model: SEResNet, training: bool = False) -> Tensor:
    """Single-frame feature vector: (3, H, W) -> (C_last,)."""
    frame = ad.as_tensor(frame)
    if frame.ndim != 3:
        raise DimensionError(f"expected a (3, H, W) frame, got {frame.shape}")
    batched = ad.reshape(frame, (1,) + frame.shape)
    return ad.reshape(model.forward(batched, training), (model.cfg.feature_dim,))


def extract_video_features(frames: Tensor, model: SEResNet, training: bool = False) -> Tensor:
    """Per-frame pooled features for a frame stack: (T, 3, H, W) -> (T, C_last).

    Frames run through the network as one batch; row t depends only on frame t
    apart from shared batch statistics while training.
    """
    frames = ad.as_tensor(frames)
    if frames.ndim != 4:
        raise DimensionError(f"expected (T, 3, H, W) frames, got {frames.shape}")
    return model.forward(frames, training)
