"""Synthesis and segmentation quality metrics for 3D volumes.

Synthesis side: PSNR (capped at 100 dB for vanishing error), SSIM with a
7^3 Gaussian window over valid positions only, NMSE in percent.

Segmentation side: Dice and Jaccard overlap, and two surface-distance
statistics computed over the symmetric multiset of directed surface
distances: ASD (its mean) and HD95 (its nearest-rank 95th percentile).
A surface voxel is a foreground voxel with at least one background
6-neighbor, where everything outside the volume counts as background.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.ndimage import correlate1d
from scipy.spatial import cKDTree

__all__ = [
    "MetricsReport",
    "psnr",
    "ssim3d",
    "nmse",
    "dice",
    "jaccard",
    "surface",
    "surface_distances",
    "asd",
    "hd95",
    "synthesis_report",
    "segmentation_report",
]

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class MetricsReport:
    """All seven metrics; synthesis-only or segmentation-only reports leave
    the other family as None."""

    psnr_db: float = None
    ssim: float = None
    nmse_pct: float = None
    dice: float = None
    jaccard: float = None
    asd_vox: float = None
    hd95_vox: float = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text):
        return MetricsReport(**json.loads(text))


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(ref, test, data_range=1.0):
    """10*log10(range^2 / mse), capped at 100 dB when mse < 1e-10."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    _check_same_shape(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * np.log10(data_range * data_range / mse)


def _gaussian_kernel1d(size, sigma):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _windowed_mean(vol, kernel):
    """Separable Gaussian filtering, then crop to valid window positions."""
    out = vol
    for axis in range(3):
        out = correlate1d(out, kernel, axis=axis, mode="constant")
    r = (len(kernel) - 1) // 2
    return out[r:-r, r:-r, r:-r]


def ssim3d(ref, test, data_range=1.0, window=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Mean SSIM over all fully-inside window positions."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    _check_same_shape(ref, test)
    if ref.ndim != 3:
        raise ValueError(f"expected 3-d volumes, got shape {ref.shape}")
    if min(ref.shape) < window:
        raise ValueError(
            f"volume {ref.shape} smaller than the {window}^3 window")
    k = _gaussian_kernel1d(window, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x = _windowed_mean(ref, k)
    mu_y = _windowed_mean(test, k)
    xx = _windowed_mean(ref * ref, k)
    yy = _windowed_mean(test * test, k)
    xy = _windowed_mean(ref * test, k)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def nmse(ref, test):
    """100 * sum((test-ref)^2) / sum(ref^2)."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    _check_same_shape(ref, test)
    energy = float(np.sum(ref * ref))
    if energy == 0.0:
        raise ValueError("NMSE undefined for an all-zero reference")
    return 100.0 * float(np.sum((test - ref) ** 2)) / energy


def _as_bool_mask(m):
    arr = np.asarray(m.data if hasattr(m, "side") else m)
    return arr > 0.5


def dice(a, b):
    """2|A n B| / (|A| + |B|); defined as 1 when both masks are empty."""
    a = _as_bool_mask(a)
    b = _as_bool_mask(b)
    _check_same_shape(a, b)
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / denom


def jaccard(a, b):
    a = _as_bool_mask(a)
    b = _as_bool_mask(b)
    _check_same_shape(a, b)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def surface(mask):
    """Coordinates of foreground voxels with a background 6-neighbor.

    The volume border counts as background, so foreground touching the
    border is always surface.
    """
    m = _as_bool_mask(mask)
    padded = np.pad(m, 1, constant_values=False)
    interior = np.ones_like(m)
    for axis in range(m.ndim):
        lo = [slice(1, -1)] * m.ndim
        hi = [slice(1, -1)] * m.ndim
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)]
        interior &= padded[tuple(hi)]
    boundary = m & ~interior
    return np.argwhere(boundary)


def surface_distances(a, b):
    """The symmetric multiset of directed surface distances between masks."""
    sa = surface(a)
    sb = surface(b)
    if len(sa) == 0 or len(sb) == 0:
        raise ValueError("surface distance undefined for an empty mask")
    d_ab = cKDTree(sb).query(sa, k=1)[0]
    d_ba = cKDTree(sa).query(sb, k=1)[0]
    return np.concatenate([d_ab, d_ba])


def asd(a, b):
    """Mean of the symmetric directed-surface-distance multiset."""
    return float(np.mean(surface_distances(a, b)))


def hd95(a, b):
    """Nearest-rank 95th percentile of the symmetric distance multiset."""
    d = np.sort(surface_distances(a, b))
    rank = int(np.ceil(0.95 * len(d))) - 1
    return float(d[max(rank, 0)])


def synthesis_report(ref, test, data_range=1.0):
    return MetricsReport(
        psnr_db=psnr(ref, test, data_range),
        ssim=ssim3d(ref, test, data_range),
        nmse_pct=nmse(ref, test),
    )


def segmentation_report(truth, pred):
    return MetricsReport(
        dice=dice(truth, pred),
        jaccard=jaccard(truth, pred),
        asd_vox=asd(truth, pred),
        hd95_vox=hd95(truth, pred),
    )
