"""Procedural lesion phantoms: ellipsoid masks with textured interiors.

Stands in for clinical data.  Each sample is a binary mask (a union of one
to three overlapping axis-aligned ellipsoids near the cube center), a lesion
cube whose interior intensity follows a radial ramp of the mask's own
distance transform, and the full host volume the cube was cut from.

The ramp matters: interior brightness is a deterministic function of lesion
geometry, so a synthesizer that sees the mask has real signal to exploit,
which is the property the guided stages are supposed to demonstrate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

from .conditioning import MaskVolume

__all__ = ["PhantomSpec", "SamplePair", "make_phantoms"]


@dataclass(frozen=True)
class PhantomSpec:
    side: int = 32
    count: int = 16
    ellipsoid_range: tuple = (1, 3)
    radius_range: tuple = None  # default (min(3, side // 8), side // 4)
    axis_wobble: float = 0.35  # per-axis radius spread around the drawn size
    lesion_mean: float = 0.8
    background_mean: float = 0.3
    noise_std: float = 0.05
    blur_sigma: float = 1.0
    ramp_gain: float = 0.2
    size_brightness: float = 0.0  # peak-level swing between smallest/largest
    host_side: int = None  # default 3 * side // 2
    jitter: int = None  # center wobble in voxels, default side // 8

    def __post_init__(self):
        if self.radius_range is None:
            lo = max(1, min(3, self.side // 8))
            object.__setattr__(self, "radius_range", (lo, self.side // 4))
        if self.host_side is None:
            object.__setattr__(self, "host_side", 3 * self.side // 2)
        if self.jitter is None:
            object.__setattr__(self, "jitter", self.side // 8)
        if self.jitter < 0 or 2 * self.jitter >= self.side:
            raise ValueError(f"bad jitter {self.jitter} for side {self.side}")
        lo, hi = self.radius_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad radius range {self.radius_range}")
        if 2 * hi >= self.side:
            raise ValueError(
                f"max radius {hi} cannot fit inside a {self.side}-cube")
        if not (0.0 <= self.background_mean <= 1.0
                and 0.0 <= self.lesion_mean <= 1.0):
            raise ValueError("mean intensities must lie in [0,1]")
        if self.host_side < self.side:
            raise ValueError("host must be at least as large as the cube")
        if not 0.0 <= self.axis_wobble < 1.0:
            raise ValueError(f"axis wobble {self.axis_wobble} outside [0, 1)")


@dataclass(frozen=True)
class SamplePair:
    """One phantom: mask and lesion cube, plus the host they came from."""

    mask: MaskVolume
    lesion: np.ndarray
    host: np.ndarray
    origin: tuple

    def __post_init__(self):
        if self.lesion.shape != self.mask.data.shape:
            raise ValueError("lesion cube and mask disagree in shape")
        d0, h0, w0 = self.origin
        s = self.mask.side
        cut = self.host[d0:d0 + s, h0:h0 + s, w0:w0 + s]
        if cut.shape != self.lesion.shape:
            raise ValueError("origin places the cube outside the host")


def _ellipsoid_mask(side, center, radii):
    coords = np.indices((side,) * 3, dtype=np.float64)
    acc = np.zeros((side,) * 3)
    for ax in range(3):
        acc += ((coords[ax] - center[ax]) / radii[ax]) ** 2
    return acc <= 1.0


def _radii(spec, rng):
    lo, hi = spec.radius_range
    r = rng.uniform(lo, hi)
    spread = 1.0 + spec.axis_wobble * rng.uniform(-1.0, 1.0, size=3)
    return np.clip(r * spread, 1.0, hi)


def _draw_mask(spec, rng):
    side = spec.side
    n_ell = int(rng.integers(spec.ellipsoid_range[0],
                             spec.ellipsoid_range[1] + 1))
    center0 = side / 2.0 + rng.uniform(-spec.jitter, spec.jitter, size=3)
    radii0 = _radii(spec, rng)
    mask = _ellipsoid_mask(side, center0, radii0)
    for _ in range(n_ell - 1):
        # keep extra lobes overlapping the first so the union stays in one piece
        center = center0 + rng.uniform(-0.7, 0.7, size=3) * radii0
        mask |= _ellipsoid_mask(side, center, _radii(spec, rng))
    return mask


def _size_level(spec, mask):
    """Peak level as a function of mask size; zero swing keeps a flat family.

    Larger lesions render brighter, so appearance stays predictable from
    geometry alone.  The size axis is the log foreground ratio, rescaled by
    the bounds the radius range permits.
    """
    if spec.size_brightness == 0.0:
        return spec.lesion_mean
    lo, hi = spec.radius_range
    total = float(spec.side) ** 3
    fg_lo = max(4.19 * lo ** 3 / 2.0, 2.0)  # sphere volume, halved for margin
    fg_hi = min(4.19 * hi ** 3 * 2.5, total)
    t = (np.log(float(mask.sum())) - np.log(fg_lo)) \
        / (np.log(fg_hi) - np.log(fg_lo))
    return spec.lesion_mean + spec.size_brightness * (
        2.0 * float(np.clip(t, 0.0, 1.0)) - 1.0)


def _lesion_cube(spec, mask, bg_cube, rng):
    """Interior intensity: size-keyed mean level plus a centripetal ramp of
    the mask's distance transform, feathered into the background."""
    edt = distance_transform_edt(mask)
    peak = edt.max()
    ramp = (edt / peak - 0.5) if peak > 0 else np.zeros_like(edt)
    interior = _size_level(spec, mask) + spec.ramp_gain * ramp
    interior = interior + rng.normal(0.0, spec.noise_std, size=mask.shape)
    alpha = gaussian_filter(mask.astype(np.float64), spec.blur_sigma)
    out = alpha * interior + (1.0 - alpha) * bg_cube
    return np.clip(out, 0.0, 1.0)


def make_phantoms(spec, seed):
    """Generate ``spec.count`` samples, bit-identical for a fixed seed."""
    rng = np.random.default_rng(seed)
    side, host_side = spec.side, spec.host_side
    samples = []
    for _ in range(spec.count):
        mask = _draw_mask(spec, rng)
        host = np.clip(
            spec.background_mean
            + rng.normal(0.0, spec.noise_std, size=(host_side,) * 3),
            0.0, 1.0)
        max_off = host_side - side
        origin = tuple(int(v) for v in rng.integers(0, max_off + 1, size=3))
        d0, h0, w0 = origin
        bg_cube = host[d0:d0 + side, h0:h0 + side, w0:w0 + side]
        lesion = _lesion_cube(spec, mask, bg_cube, rng).astype(np.float32)
        host = host.astype(np.float32)
        host[d0:d0 + side, h0:h0 + side, w0:w0 + side] = lesion
        samples.append(SamplePair(
            mask=MaskVolume(mask.astype(np.uint8)),
            lesion=lesion,
            host=host,
            origin=origin,
        ))
    return samples
