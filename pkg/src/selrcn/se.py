"""Squeeze, excitation, and reweight primitives for feature recalibration.

The same three-step pattern serves two settings:

* spatial: per-channel gates for CNN feature maps, where the squeeze averages
  each channel's HxW plane;
* temporal: gates for a pooled feature sequence U (T frames x C channels),
  squeezing either across channels (one gate per frame) or across time (one
  gate per channel).

Excitation is a biasless two-layer bottleneck s = sigmoid(W2 @ relu(W1 @ z))
with hidden width max(1, floor(d / r)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor


@dataclass
class SEConfig:
    """Shape and mode of one squeeze-excitation site.

    squeeze_axis names the axis that gets averaged away:
      * "spatial": HxW planes -> per-channel gates;
      * "channel": feature channels of a sequence -> per-frame gates;
      * "time":    frames of a sequence -> per-channel gates.
    """

    reduction_ratio: int = 16
    squeeze_axis: str = "spatial"
    reweight_mode: str = "residual"

    def __post_init__(self):
        if self.reduction_ratio < 1:
            raise ValueError(f"reduction_ratio must be >= 1, got {self.reduction_ratio}")
        if self.squeeze_axis not in ("spatial", "channel", "time"):
            raise ValueError(f"unknown squeeze_axis {self.squeeze_axis!r}")
        if self.reweight_mode not in ("scale_only", "residual"):
            raise ValueError(f"unknown reweight_mode {self.reweight_mode!r}")

    def hidden_dim(self, d: int) -> int:
        return max(1, d // self.reduction_ratio)


def init_excitation_weights(d: int, cfg: SEConfig, rng: np.random.Generator,
                            dtype=np.float32) -> tuple[Tensor, Tensor]:
    """Biasless bottleneck weights W1 (hidden x d) and W2 (d x hidden)."""
    hidden = cfg.hidden_dim(d)
    bound1 = 1.0 / np.sqrt(d)
    bound2 = 1.0 / np.sqrt(hidden)
    w1 = Tensor(rng.uniform(-bound1, bound1, size=(hidden, d)).astype(dtype), requires_grad=True)
    w2 = Tensor(rng.uniform(-bound2, bound2, size=(d, hidden)).astype(dtype), requires_grad=True)
    return w1, w2


def squeeze_spatial(u) -> Tensor:
    """Average each channel's HxW plane: (..., C, H, W) -> (..., C)."""
    u = ad.as_tensor(u)
    if u.ndim < 3:
        raise DimensionError(f"squeeze_spatial expects (..., C, H, W), got {u.shape}")
    return ad.global_avg_pool(u)


def excitation(z, w1: Tensor, w2: Tensor, cfg: SEConfig | None = None) -> Tensor:
    """Gate vector s = sigmoid(W2 @ relu(W1 @ z)), each entry in (0, 1).

    Accepts a single descriptor (d,) or a batch (B, d).
    """
    z = ad.as_tensor(z)
    if w1.ndim != 2 or w2.ndim != 2:
        raise DimensionError(f"excitation weights must be 2-d, got {w1.shape} and {w2.shape}")
    hidden, d = w1.shape
    if w2.shape != (d, hidden):
        raise DimensionError(f"W2 shape {w2.shape} does not mirror W1 {w1.shape}")
    single = z.ndim == 1
    if single:
        z = ad.reshape(z, (1, z.shape[0]))
    if z.shape[-1] != d:
        raise DimensionError(f"descriptor length {z.shape[-1]} != W1 width {d}")
    hidden_act = ad.relu(ad.matmul(z, ad.transpose(w1)))
    s = ad.sigmoid(ad.matmul(hidden_act, ad.transpose(w2)))
    if single:
        s = ad.reshape(s, (d,))
    return s


def reweight_residual(u_prev, u_cur, s) -> Tensor:
    """Gated residual merge: out_c = u_prev_c + s_c * u_cur_c (channelwise)."""
    u_prev, u_cur, s = ad.as_tensor(u_prev), ad.as_tensor(u_cur), ad.as_tensor(s)
    if u_prev.shape != u_cur.shape:
        raise DimensionError(f"reweight_residual shapes disagree: {u_prev.shape} vs {u_cur.shape}")
    c = u_cur.shape[-3]
    if s.shape[-1] != c:
        raise DimensionError(f"gate length {s.shape[-1]} != channel count {c}")
    gate = ad.reshape(s, s.shape + (1, 1))
    return ad.add(u_prev, ad.mul(gate, u_cur))


def squeeze_frames(u) -> Tensor:
    """One scalar per frame: average row of a (T, C) sequence over channels."""
    u = ad.as_tensor(u)
    if u.ndim < 2:
        raise DimensionError(f"squeeze_frames expects (..., T, C), got {u.shape}")
    return ad.mean(u, axis=-1)


def squeeze_channels(u) -> Tensor:
    """One scalar per channel: average column of a (T, C) sequence over frames."""
    u = ad.as_tensor(u)
    if u.ndim < 2:
        raise DimensionError(f"squeeze_channels expects (..., T, C), got {u.shape}")
    return ad.mean(u, axis=-2)


def reweight_sequence(u, s, cfg: SEConfig) -> Tensor:
    """Apply gates to a (T, C) sequence along the axis the config squeezed.

    scale_only: U'[t,c] = gate * U[t,c]; residual: U'[t,c] = U[t,c] + gate * U[t,c].
    Gates of length T pair with squeeze_axis="channel" (per-frame), length C
    with squeeze_axis="time" (per-channel).
    """
    u, s = ad.as_tensor(u), ad.as_tensor(s)
    if u.ndim < 2:
        raise DimensionError(f"reweight_sequence expects (..., T, C), got {u.shape}")
    t_len, c_len = u.shape[-2], u.shape[-1]
    if cfg.squeeze_axis == "channel":
        if s.shape[-1] != t_len:
            raise DimensionError(
                f"per-frame gates need length {t_len}, got {s.shape[-1]} (sequence {u.shape})")
        gate = ad.reshape(s, s.shape + (1,))
    elif cfg.squeeze_axis == "time":
        if s.shape[-1] != c_len:
            raise DimensionError(
                f"per-channel gates need length {c_len}, got {s.shape[-1]} (sequence {u.shape})")
        # batched gates (B, C) need an explicit frame axis to broadcast over T
        gate = s if s.ndim == 1 else ad.reshape(s, s.shape[:-1] + (1, c_len))
    else:
        raise ValueError(f"reweight_sequence needs a sequence squeeze_axis, got {cfg.squeeze_axis!r}")
    scaled = ad.mul(gate, u)
    if cfg.reweight_mode == "scale_only":
        return scaled
    return ad.add(u, scaled)
