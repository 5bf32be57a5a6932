"""Stacked LSTM with an excitation gate on its input sequence.

The gate recalibrates the pooled feature sequence U (T frames x C channels)
before the first layer only. Per-frame logits come from a linear head; frame
probabilities are fused into one video-level distribution by mean (or max)
late fusion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import se
from .autodiff import DimensionError, Tensor

GATE_ORDER = ("input", "forget", "cell", "output")
FORGET_BIAS_INIT = 1.0


@dataclass
class SELSTMConfig:
    layers: int = 3
    hidden: int = 1024
    dropout: float = 0.5
    se_enabled: bool = True
    se_cfg: se.SEConfig | None = None
    class_count: int = 2
    input_dim: int = 512

    def __post_init__(self):
        if self.se_cfg is None:
            # Eq-4 style default: squeeze across channels, one gate per frame
            self.se_cfg = se.SEConfig(reduction_ratio=16, squeeze_axis="channel",
                                      reweight_mode="residual")


class LSTMLayerParams:
    """One layer's weights: input map (4H x D), recurrent map (4H x H), bias (4H).

    Gate slices follow GATE_ORDER; the forget-gate bias starts at 1 so early
    training does not wipe the cell state.
    """

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.input_dim = input_dim
        self.hidden = hidden
        bound_x = 1.0 / math.sqrt(input_dim)
        bound_h = 1.0 / math.sqrt(hidden)
        self.w_x = Tensor(rng.uniform(-bound_x, bound_x, (4 * hidden, input_dim)).astype(dtype),
                          requires_grad=True)
        self.w_h = Tensor(rng.uniform(-bound_h, bound_h, (4 * hidden, hidden)).astype(dtype),
                          requires_grad=True)
        bias = np.zeros(4 * hidden, dtype=dtype)
        bias[hidden:2 * hidden] = FORGET_BIAS_INIT
        self.b = Tensor(bias, requires_grad=True)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_x": self.w_x, f"{prefix}.w_h": self.w_h, f"{prefix}.b": self.b}


def lstm_cell_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
                   params: LSTMLayerParams) -> tuple[Tensor, Tensor]:
    """One recurrence step for a (B, D) input (or (D,) treated as batch 1)."""
    x_t, h_prev, c_prev = ad.as_tensor(x_t), ad.as_tensor(h_prev), ad.as_tensor(c_prev)
    single = x_t.ndim == 1
    if single:
        x_t = ad.reshape(x_t, (1, x_t.shape[0]))
        h_prev = ad.reshape(h_prev, (1, h_prev.shape[0]))
        c_prev = ad.reshape(c_prev, (1, c_prev.shape[0]))
    if x_t.shape[-1] != params.input_dim or h_prev.shape[-1] != params.hidden:
        raise DimensionError(
            f"lstm step got input {x_t.shape}, hidden {h_prev.shape}; layer expects "
            f"D={params.input_dim}, H={params.hidden}")
    hidden = params.hidden
    gates = ad.add(ad.add(ad.matmul(x_t, ad.transpose(params.w_x)),
                          ad.matmul(h_prev, ad.transpose(params.w_h))),
                   ad.reshape(params.b, (1, 4 * hidden)))
    gates = ad.reshape(gates, (-1, 4, hidden))
    i = ad.sigmoid(ad.take(gates, 0, axis=1))
    f = ad.sigmoid(ad.take(gates, 1, axis=1))
    g = ad.tanh(ad.take(gates, 2, axis=1))
    o = ad.sigmoid(ad.take(gates, 3, axis=1))
    c_t = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h_t = ad.mul(o, ad.tanh(c_t))
    if single:
        h_t = ad.reshape(h_t, (hidden,))
        c_t = ad.reshape(c_t, (hidden,))
    return h_t, c_t


class SELSTM:
    """Gate (optional) + stacked LSTM layers over a feature sequence."""

    def __init__(self, cfg: SELSTMConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.layers: list[LSTMLayerParams] = []
        d = cfg.input_dim
        for _ in range(cfg.layers):
            self.layers.append(LSTMLayerParams(d, cfg.hidden, rng, dtype))
            d = cfg.hidden
        self.se_w1 = self.se_w2 = None
        self._se_dim: int | None = None

    def _ensure_gate(self, t_len: int, c_len: int, rng: np.random.Generator | None = None):
        """Gate width depends on the squeeze axis: T gates or C gates."""
        d = t_len if self.cfg.se_cfg.squeeze_axis == "channel" else c_len
        if self.se_w1 is None:
            if rng is None:
                rng = np.random.default_rng(0)
            self.se_w1, self.se_w2 = se.init_excitation_weights(
                d, self.cfg.se_cfg, rng, self.dtype)
            self._se_dim = d
        elif self._se_dim != d:
            raise DimensionError(
                f"sequence gate built for length {self._se_dim}, got sequence needing {d}")

    def init_gate(self, t_len: int, c_len: int, rng: np.random.Generator) -> None:
        self._ensure_gate(t_len, c_len, rng)

    def gate_values(self, u: Tensor) -> Tensor:
        """Excitation weights for a (T, C) or (B, T, C) sequence."""
        squeeze = se.squeeze_frames if self.cfg.se_cfg.squeeze_axis == "channel" \
            else se.squeeze_channels
        return se.excitation(squeeze(u), self.se_w1, self.se_w2, self.cfg.se_cfg)

    def forward(self, u: Tensor, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Top-layer hidden states: (T, C) -> (T, H), or batched (B, T, C) -> (B, T, H).

        Dropout sits between LSTM layers, training mode only.
        """
        u = ad.as_tensor(u)
        single = u.ndim == 2
        if single:
            u = ad.reshape(u, (1,) + u.shape)
        if u.shape[-1] != self.cfg.input_dim:
            raise DimensionError(
                f"sequence channels {u.shape[-1]} != configured input dim {self.cfg.input_dim}")
        b, t_len, c_len = u.shape
        if self.cfg.se_enabled:
            self._ensure_gate(t_len, c_len)
            gate = self.gate_values(u)
            u = se.reweight_sequence(u, gate, self.cfg.se_cfg)
        if training and self.cfg.dropout > 0 and rng is None:
            rng = np.random.default_rng(0)
        for li, layer in enumerate(self.layers):
            h = Tensor(np.zeros((b, self.cfg.hidden), dtype=u.dtype))
            c = Tensor(np.zeros((b, self.cfg.hidden), dtype=u.dtype))
            outputs = []
            for t in range(t_len):
                h, c = lstm_cell_step(ad.take(u, t, axis=1), h, c, layer)
                outputs.append(h)
            u = ad.stack(outputs, axis=1)
            if li < len(self.layers) - 1:
                u = ad.dropout(u, self.cfg.dropout, rng, training)
        return ad.reshape(u, (t_len, self.cfg.hidden)) if single else u

    def named_params(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        if self.cfg.se_enabled and self.se_w1 is not None:
            params["se.w1"] = self.se_w1
            params["se.w2"] = self.se_w2
        for i, layer in enumerate(self.layers):
            params.update(layer.named_params(f"layer{i}"))
        return params


class ClassifierHead:
    """Linear map from hidden states to class logits."""

    def __init__(self, hidden: int, class_count: int, rng: np.random.Generator,
                 dtype=np.float32):
        bound = 1.0 / math.sqrt(hidden)
        self.weight = Tensor(rng.uniform(-bound, bound, (class_count, hidden)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(class_count, dtype=dtype), requires_grad=True)

    def logits(self, h: Tensor) -> Tensor:
        h = ad.as_tensor(h)
        return ad.add(ad.matmul(h, ad.transpose(self.weight)),
                      ad.reshape(self.bias, (1, -1)))

    def named_params(self, prefix: str = "head") -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def classify_frames(h: Tensor, head: ClassifierHead) -> Tensor:
    """Per-frame class probabilities: (T, H) -> (T, K) softmax rows."""
    return ad.softmax(head.logits(h), axis=-1)


def late_fuse(per_frame: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Fuse per-frame distributions (T, K) into one video-level distribution.

    Mean fusion uses exactly-rounded column sums, so reordering frames cannot
    change the result even in the last bit. Max fusion renormalizes to sum 1.
    """
    probs = per_frame.data if isinstance(per_frame, Tensor) else np.asarray(per_frame)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise DimensionError(f"late_fuse expects (T, K) probabilities, got {probs.shape}")
    t_len, k = probs.shape
    if mode == "mean":
        cols = [math.fsum(float(v) for v in probs[:, c]) / t_len for c in range(k)]
        return np.asarray(cols, dtype=np.float64)
    if mode == "max":
        peaks = probs.max(axis=0).astype(np.float64)
        return peaks / peaks.sum()
    raise ValueError(f"unknown late fusion mode {mode!r}")


@dataclass
class PredictionResult:
    per_frame: np.ndarray
    fused: np.ndarray
    predicted_class: int


def predict_sequence(h: Tensor, head: ClassifierHead, fusion: str = "mean") -> PredictionResult:
    """Classify every frame, fuse, and pick the argmax (lowest index on ties)."""
    per_frame = classify_frames(h, head).data
    fused = late_fuse(per_frame, mode=fusion)
    return PredictionResult(per_frame=per_frame, fused=fused,
                            predicted_class=int(np.argmax(fused)))
