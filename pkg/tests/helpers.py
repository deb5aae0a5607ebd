"""Shared oracles and finite-difference machinery for the test suite."""

import numpy as np

from lesionsynth.tensor import Tensor


def rel_err(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(float(np.abs(want).max()), 1e-12)
    return float(np.abs(got - want).max()) / denom


def central_diff(f, arrays, which, h=1e-6):
    """Numerical gradient of scalar ``f(*arrays)`` w.r.t. ``arrays[which]``."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[which])
    flat = grad.reshape(-1)
    x = base[which].reshape(-1)
    for i in range(x.size):
        keep = x[i]
        x[i] = keep + h
        hi = float(f(*base))
        x[i] = keep - h
        lo = float(f(*base))
        x[i] = keep
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def check_grads(f, arrays, h=1e-6, tol=1e-7):
    """Compare reverse-mode gradients of scalar ``f`` against central FD.

    ``f`` maps Tensors to a scalar Tensor; ``arrays`` are float64 inputs.
    Returns the worst relative error across inputs.
    """
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True)
               for a in arrays]
    out = f(*tensors)
    out.backward()
    worst = 0.0
    for k, t in enumerate(tensors):
        want = central_diff(lambda *xs: f(*(Tensor(x) for x in xs)).item(),
                            arrays, k, h=h)
        worst = max(worst, rel_err(t.grad.data, want))
    assert worst < tol, f"gradient mismatch: rel err {worst:.3e} >= {tol}"
    return worst


def conv3d_oracle(x, w, stride=1, pad=1):
    """Nested-loop cross-correlation, the reference for every conv test."""
    n, ci, d, hh, ww = x.shape
    co, ci2, kd, kh, kw = w.shape
    assert ci == ci2
    xp = np.pad(x, ((0, 0), (0, 0)) + ((pad, pad),) * 3)
    do = (d + 2 * pad - kd) // stride + 1
    ho = (hh + 2 * pad - kh) // stride + 1
    wo = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, do, ho, wo), dtype=np.float64)
    for b in range(n):
        for o in range(co):
            for zi in range(do):
                for yi in range(ho):
                    for xi in range(wo):
                        patch = xp[b, :,
                                   zi * stride:zi * stride + kd,
                                   yi * stride:yi * stride + kh,
                                   xi * stride:xi * stride + kw]
                        out[b, o, zi, yi, xi] = float((patch * w[o]).sum())
    return out


def ssim3d_oracle(ref, test, data_range=1.0, window=7, sigma=1.5):
    """Direct sliding-window SSIM with an explicit 3-d Gaussian kernel."""
    half = window // 2
    ax = np.arange(window, dtype=np.float64) - half
    g1 = np.exp(-0.5 * (ax / sigma) ** 2)
    kernel = g1[:, None, None] * g1[None, :, None] * g1[None, None, :]
    kernel /= kernel.sum()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    d, h, w = ref.shape
    vals = []
    for zi in range(d - window + 1):
        for yi in range(h - window + 1):
            for xi in range(w - window + 1):
                a = ref[zi:zi + window, yi:yi + window, xi:xi + window]
                b = test[zi:zi + window, yi:yi + window, xi:xi + window]
                mu_a = (kernel * a).sum()
                mu_b = (kernel * b).sum()
                var_a = (kernel * a * a).sum() - mu_a ** 2
                var_b = (kernel * b * b).sum() - mu_b ** 2
                cov = (kernel * a * b).sum() - mu_a * mu_b
                vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                            / ((mu_a ** 2 + mu_b ** 2 + c1)
                               * (var_a + var_b + c2)))
    return float(np.mean(vals))


def surface_oracle(mask):
    """Boundary voxels by definition: foreground with a background 6-neighbor."""
    m = np.asarray(mask, dtype=bool)
    pts = []
    for p in np.argwhere(m):
        for ax in range(3):
            for step in (-1, 1):
                q = p.copy()
                q[ax] += step
                if (q < 0).any() or (q >= np.array(m.shape)).any() or not m[tuple(q)]:
                    pts.append(p)
                    break
            else:
                continue
            break
    return np.array(pts, dtype=np.int64).reshape(-1, 3)


def surface_distance_oracle(a, b):
    """All-pairs symmetric surface distances, brute force."""
    sa = surface_oracle(a).astype(np.float64)
    sb = surface_oracle(b).astype(np.float64)
    d_ab = [min(np.linalg.norm(p - q) for q in sb) for p in sa]
    d_ba = [min(np.linalg.norm(q - p) for p in sa) for q in sb]
    return np.array(d_ab + d_ba)


def hd95_oracle(dists):
    s = np.sort(dists)
    rank = int(np.ceil(0.95 * len(s))) - 1
    return float(s[rank])


def random_mask(rng, side, p=0.3):
    """Random blob-ish mask that is never empty."""
    m = rng.random((side,) * 3) < p
    if not m.any():
        m[tuple(rng.integers(0, side, size=3))] = True
    return m
