"""Condition and mask embedding blocks.

Two ways of steering a decoder through its normalization layers:

* CEB maps a small condition vector (here: normalized log lesion volume)
  through a two-layer MLP to per-channel scale and bias.
* MEB maps a binary mask, nearest-downsampled to the feature resolution,
  through a shared convolution and two head convolutions to voxelwise scale
  and bias.

Both modulate instance-normalized features as ``h * (1 + gamma) + beta``
with zero-initialized heads, so an untrained block is exactly the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .nn import Conv3dLayer, Linear, LEAKY_SLOPE

__all__ = [
    "ConditionVector",
    "MaskVolume",
    "encode_condition",
    "mask_downsample_nearest",
    "ConditionEmbedding",
    "MaskEmbedding",
    "HIDDEN_WIDTH",
]

HIDDEN_WIDTH = 32


@dataclass(frozen=True)
class ConditionVector:
    """A k-dimensional semantic condition; k=1 carries lesion size."""

    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 1:
            raise ValueError(f"condition must be a vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("condition vector must be finite")
        object.__setattr__(self, "values", v)

    @property
    def k(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class MaskVolume:
    """A binary cube; side length a power of two."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3 or len(set(d.shape)) != 1:
            raise ValueError(f"mask must be a cube, got shape {d.shape}")
        side = d.shape[0]
        if side < 1 or side & (side - 1):
            raise ValueError(f"mask side must be a power of two, got {side}")
        values = np.unique(d)
        if not np.all(np.isin(values, (0, 1))):
            raise ValueError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "data", d.astype(np.float32))

    @property
    def side(self):
        return self.data.shape[0]

    @property
    def foreground(self):
        return int(self.data.sum())


def encode_condition(mask):
    """Size feature of a mask: log(foreground count) / log(total voxels)."""
    if not isinstance(mask, MaskVolume):
        mask = MaskVolume(mask)
    fg = mask.foreground
    if fg == 0:
        raise ValueError("cannot encode an empty mask")
    total = mask.data.size
    return ConditionVector([np.log(fg) / np.log(total)])


def mask_downsample_nearest(mask, target_side):
    """Nearest-neighbor downsample: output (i,j,k) = input (i*r, j*r, k*r)."""
    arr = mask.data if isinstance(mask, MaskVolume) else np.asarray(mask)
    side = arr.shape[-1]
    if side % target_side:
        raise ValueError(f"target side {target_side} does not divide {side}")
    r = side // target_side
    out = arr[..., ::r, ::r, ::r]
    if isinstance(mask, MaskVolume):
        return MaskVolume(out)
    return out


def _as_condition_batch(c, k):
    """Coerce a condition argument to a Tensor of shape [N, k]."""
    if isinstance(c, ConditionVector):
        arr = c.values[None, :]
    elif isinstance(c, Tensor):
        return c if c.ndim == 2 else T.reshape(c, (1, c.size))
    else:
        arr = np.atleast_2d(np.asarray(c, dtype=np.float32))
    if arr.shape[1] != k:
        raise ValueError(f"condition dimension {arr.shape[1]}, expected {k}")
    return Tensor(arr.astype(np.float32))


class ConditionEmbedding:
    """CEB: condition vector -> per-channel (gamma, beta) via a 2-layer MLP.

    ``frozen`` short-circuits the block to its identity behavior (valid
    because the zero-initialized heads make an untrained block a no-op);
    the baseline configuration sets it instead of evaluating dead layers.
    """

    def __init__(self, k, channels, rng, id, hidden=HIDDEN_WIDTH):
        self.k = k
        self.channels = channels
        self.frozen = False
        self.shared = Linear(k, hidden, rng, f"{id}.shared")
        self.gamma_head = Linear(hidden, channels, rng, f"{id}.gamma", zero_init=True)
        self.beta_head = Linear(hidden, channels, rng, f"{id}.beta", zero_init=True)

    def __call__(self, h, c):
        if self.frozen:
            return h
        if h.ndim != 5 or h.shape[1] != self.channels:
            raise ValueError(
                f"features must be [N,{self.channels},D,H,W], got {h.shape}")
        cb = _as_condition_batch(c, self.k)
        if cb.shape[0] != h.shape[0]:
            raise ValueError(
                f"batch mismatch: {cb.shape[0]} conditions for {h.shape[0]} samples")
        hid = T.leaky_relu(self.shared(cb), alpha=LEAKY_SLOPE)
        side = (h.shape[0], self.channels, 1, 1, 1)
        gamma = T.reshape(self.gamma_head(hid), side)
        beta = T.reshape(self.beta_head(hid), side)
        return h * (1.0 + gamma) + beta

    def parameters(self):
        return (self.shared.parameters() + self.gamma_head.parameters()
                + self.beta_head.parameters())


class MaskEmbedding:
    """MEB: downsampled mask -> voxelwise (gamma, beta) via three convolutions.

    Same ``frozen`` identity short-circuit as the condition block.
    """

    def __init__(self, channels, rng, id, hidden=HIDDEN_WIDTH):
        self.channels = channels
        self.frozen = False
        self.shared = Conv3dLayer(1, hidden, rng, f"{id}.shared")
        self.gamma_head = Conv3dLayer(hidden, channels, rng, f"{id}.gamma",
                                      zero_init=True)
        self.beta_head = Conv3dLayer(hidden, channels, rng, f"{id}.beta",
                                     zero_init=True)

    def __call__(self, h, masks):
        """Modulate ``h`` [N,C,D,H,W] by per-sample binary ``masks``.

        ``masks`` may be a MaskVolume (batch of one), an [N,S,S,S] array, or
        an [N,1,S,S,S] array; S must be divisible down to h's spatial side.
        """
        if self.frozen:
            return h
        if h.ndim != 5 or h.shape[1] != self.channels:
            raise ValueError(
                f"features must be [N,{self.channels},D,H,W], got {h.shape}")
        m = masks.data if isinstance(masks, MaskVolume) else np.asarray(masks)
        if m.ndim == 3:
            m = m[None]
        if m.ndim == 4:
            m = m[:, None]
        if m.ndim != 5 or m.shape[0] != h.shape[0] or m.shape[1] != 1:
            raise ValueError(
                f"masks must be [N,1,S,S,S] with N={h.shape[0]}, got {m.shape}")
        target = h.shape[2]
        if m.shape[2] != target:
            m = mask_downsample_nearest(m, target)
        m = Tensor(np.ascontiguousarray(m, dtype=h.dtype.type))
        hid = T.leaky_relu(self.shared(m), alpha=LEAKY_SLOPE)
        gamma = self.gamma_head(hid)
        beta = self.beta_head(hid)
        return h * (1.0 + gamma) + beta

    def parameters(self):
        return (self.shared.parameters() + self.gamma_head.parameters()
                + self.beta_head.parameters())
