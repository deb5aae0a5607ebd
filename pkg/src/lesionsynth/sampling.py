"""Sampling from trained stages and compositing lesions into host volumes.

Mask sampling draws shape latents from the prior, a size condition from the
empirical training range, decodes, binarizes at the configured threshold,
and keeps the largest 6-connected component; empty decodes are resampled a
bounded number of times.  Lesion sampling pairs each mask with a fresh
intensity latent.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter, label

from .tensor import Tensor, no_grad
from .conditioning import MaskVolume

__all__ = [
    "BINARIZE_THRESHOLD",
    "MAX_MASK_RETRIES",
    "DegenerateModel",
    "binarize_mask",
    "sample_masks",
    "sample_lesions",
    "composite",
]

BINARIZE_THRESHOLD = 0.5
MAX_MASK_RETRIES = 10


class DegenerateModel(RuntimeError):
    """Every resampling attempt decoded to an empty mask."""


def binarize_mask(volume, threshold=BINARIZE_THRESHOLD):
    """Threshold, then keep the largest 6-connected component.

    Returns None when nothing survives the threshold; callers resample.
    """
    binary = np.asarray(volume) > threshold
    if not binary.any():
        return None
    labels, n = label(binary)  # default structure is 6-connectivity
    if n > 1:
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        binary = labels == sizes.argmax()
    return MaskVolume(binary.astype(np.uint8))


def sample_masks(trained, n, seed, threshold=BINARIZE_THRESHOLD,
                 conditions=None):
    """Draw ``n`` binary masks from a trained mask stage.

    Size conditions are drawn uniformly from the empirical training range
    unless ``conditions`` supplies one row per mask, for generating masks
    of designated sizes.
    """
    stage = trained.stage
    latent = stage.cfg.latent_dim
    if conditions is not None:
        conditions = np.asarray(conditions, dtype=np.float32).reshape(n, -1)
    rng = np.random.default_rng(seed)
    out = [None] * n
    pending = list(range(n))
    for _ in range(MAX_MASK_RETRIES + 1):
        if not pending:
            break
        z = Tensor(rng.standard_normal((len(pending), latent)).astype(np.float32))
        if conditions is None:
            lo, hi = trained.condition_range
            c = rng.uniform(lo, hi, size=(len(pending), 1)).astype(np.float32)
        else:
            c = conditions[pending]
        with no_grad():
            decoded = stage.decoder(z, c).data[:, 0]
        still = []
        for row, i in enumerate(pending):
            mask = binarize_mask(decoded[row], threshold)
            if mask is None:
                still.append(i)
            else:
                out[i] = mask
        pending = still
    if pending:
        raise DegenerateModel(
            f"mask model decoded empty volumes for {len(pending)} of {n} draws "
            f"after {MAX_MASK_RETRIES} retries")
    return out


def sample_lesions(trained, masks, seed, batch=8):
    """Decode one lesion per mask, each with a fresh intensity latent."""
    stage = trained.stage
    side = stage.cfg.side
    latent = stage.cfg.latent_dim
    arr = np.stack([m.data if isinstance(m, MaskVolume) else np.asarray(m)
                    for m in masks]).astype(np.float32)
    if arr.shape[1:] != (side,) * 3:
        raise ValueError(
            f"masks are {arr.shape[1:]}, the model expects {(side,) * 3}")
    rng = np.random.default_rng(seed)
    pieces = []
    for at in range(0, len(arr), batch):
        chunk = arr[at:at + batch]
        z = Tensor(rng.standard_normal((len(chunk), latent)).astype(np.float32))
        with no_grad():
            pieces.append(stage.decoder(z, chunk).data[:, 0])
    return list(np.concatenate(pieces))


def composite(host, lesion, mask, origin, blur_sigma=1.0):
    """Feathered paste of a lesion cube into a host volume.

    The alpha map is the Gaussian-blurred mask; values within 1e-6 of the
    extremes snap to exactly 0 or 1, so deep-interior voxels copy the lesion
    verbatim and everything beyond the blur support leaves the host
    untouched bit-for-bit.
    """
    host = np.asarray(host)
    lesion = np.asarray(lesion)
    m = mask.data if isinstance(mask, MaskVolume) else np.asarray(mask)
    if lesion.shape != m.shape:
        raise ValueError(f"lesion {lesion.shape} vs mask {m.shape}")
    side = m.shape[0]
    origin = tuple(int(v) for v in origin)
    if len(origin) != 3 or any(o < 0 for o in origin) or any(
            o + side > hs for o, hs in zip(origin, host.shape)):
        raise ValueError(
            f"cube of side {side} at origin {origin} does not fit in host "
            f"{host.shape}")
    alpha = gaussian_filter(m.astype(np.float64), blur_sigma)
    alpha[alpha > 1.0 - 1e-6] = 1.0
    alpha[alpha < 1e-6] = 0.0
    out = host.copy()
    d0, h0, w0 = origin
    roi = out[d0:d0 + side, h0:h0 + side, w0:w0 + side]
    blended = alpha * lesion + (1.0 - alpha) * roi
    out[d0:d0 + side, h0:h0 + side, w0:w0 + side] = blended.astype(host.dtype)
    return out
