"""Training objectives: reconstruction, KL, and the Wasserstein pair.

The adversarial pair follows the gradient-penalty formulation: the critic
minimizes ``mean D(x_g) - mean D(x_r) + lambda * mean (|grad D(x_hat)| - 1)^2``
with x_hat drawn on the segment between real and generated samples (one
uniform weight per sample), and the generator minimizes ``-mean D(x_g)``.

Reconstruction and KL are written as sums per sample in the source
formulation; by default they are averaged so magnitudes do not scale with
batch size.  ``reduction="sum"`` restores the strict per-batch sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "LossWeights",
    "GpConfig",
    "LossReport",
    "recon_mse",
    "kl_gaussian",
    "gradient_penalty",
    "critic_loss",
    "gen_adv_loss",
    "generator_total",
]


@dataclass(frozen=True)
class LossWeights:
    w_rec: float = 1.0
    w_kl: float = 1.0
    w_adv: float = 0.01

    def __post_init__(self):
        if min(self.w_rec, self.w_kl, self.w_adv) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.w_rec == self.w_kl == self.w_adv == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class GpConfig:
    gp_lambda: float = 10.0

    def __post_init__(self):
        if self.gp_lambda < 0:
            raise ValueError("gradient-penalty lambda must be non-negative")


@dataclass(frozen=True)
class LossReport:
    """Scalar terms of one training step, for logging."""

    l_rec: float
    l_kl: float
    l_g: float
    l_d: float
    gp_term: float
    total_gen: float
    total_critic: float


def _check_reduction(reduction):
    if reduction not in ("mean", "sum"):
        raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction!r}")


def recon_mse(x_g, x_r, reduction="mean"):
    """Squared error between generated and real volumes.

    ``mean``: averaged over batch and voxels.  ``sum``: the raw total over
    batch and voxels (the source formulation's per-batch sum).
    """
    _check_reduction(reduction)
    if x_g.shape != x_r.shape:
        raise ValueError(f"shape mismatch: {x_g.shape} vs {x_r.shape}")
    d = x_g - x_r
    sq = d * d
    return sq.mean() if reduction == "mean" else sq.sum()


def kl_gaussian(mu, logvar, reduction="mean"):
    """KL(N(mu, exp(logvar)) || N(0, I)) in closed form.

    Per sample: -1/2 * sum_j (1 + logvar_j - mu_j^2 - exp(logvar_j)).
    ``mean`` averages the per-sample values over the batch; ``sum`` totals
    them.
    """
    _check_reduction(reduction)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch: {mu.shape} vs {logvar.shape}")
    if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(logvar.data))):
        raise ValueError("non-finite latent statistics")
    inner = 1.0 + logvar - mu * mu - T.exp(logvar)
    per_sample = inner.sum(axis=1) * (-0.5)
    return per_sample.mean() if reduction == "mean" else per_sample.sum()


def gradient_penalty(critic, x_r, x_g, cfg, rng):
    """lambda * mean((|grad_xhat D(xhat)|_2 - 1)^2) over the batch.

    ``x_r`` and ``x_g`` enter as constants; the result stays differentiable
    with respect to the critic parameters through the recorded reverse pass.
    """
    if x_r.shape != x_g.shape:
        raise ValueError(f"shape mismatch: {x_r.shape} vs {x_g.shape}")
    n = x_r.shape[0]
    u = rng.random(n, dtype=np.float32).reshape((n,) + (1,) * (x_r.ndim - 1))
    with T.no_grad():
        mix = u * x_r.data + (1.0 - u) * x_g.data
    x_hat = Tensor(mix, requires_grad=True)
    score = critic(x_hat)
    (g,) = T.grad(score.sum(), [x_hat], create_graph=True)
    flat = T.reshape(g, (n, g.size // n))
    sq_norm = (flat * flat).sum(axis=1)
    norm = T.sqrt(sq_norm + 1e-12)
    shortfall = norm - 1.0
    return (shortfall * shortfall).mean() * cfg.gp_lambda


def critic_loss(critic, x_r, x_g, cfg, rng):
    """Wasserstein critic objective plus gradient penalty.

    Returns (total, l_d, gp_term) where l_d is the penalty-free part.
    """
    l_d = critic(x_g).mean() - critic(x_r).mean()
    gp = gradient_penalty(critic, x_r, x_g, cfg, rng)
    return l_d + gp, l_d, gp


def gen_adv_loss(critic, x_g):
    """Generator's adversarial term: -mean critic score on generated samples."""
    return critic(x_g).mean() * (-1.0)


def generator_total(l_rec, l_kl, l_g, weights):
    return weights.w_rec * l_rec + weights.w_kl * l_kl + weights.w_adv * l_g
