"""Two-stage adversarial training loops.

Each stage runs the same schedule: ``n_critic`` critic updates (Wasserstein
loss with gradient penalty, generated samples produced without recording),
then one generator update combining reconstruction, KL, and the adversarial
score.  Critic and generator own independent Adam optimizers and never share
state.

Setting ``w_adv`` to zero and ``train_conditioning`` to False degrades a
stage to a plain VAE: the critic is skipped and the zero-initialized
modulation heads never move, so the decoder runs unconditioned.  The
size-ordering baseline is that configuration, not separate code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .nn import Adam
from .models import NetConfig, build_mask_stage, build_lesion_stage, reparameterize
from .conditioning import encode_condition
from .losses import (LossWeights, GpConfig, LossReport, recon_mse, kl_gaussian,
                     critic_loss, gen_adv_loss, generator_total)

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "TrainedStage",
    "train_mask_stage",
    "train_lesion_stage",
    "write_loss_csv",
    "LOSS_CSV_HEADER",
]

LOSS_CSV_HEADER = "step,l_rec,l_kl,l_g,l_d,gp_term"


class TrainingDiverged(RuntimeError):
    """Raised when a loss or parameter stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    net: NetConfig = field(default_factory=NetConfig)
    lr: float = 5e-5
    batch: int = 8
    epochs: int = 10
    n_critic: int = 5
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    gp: GpConfig = field(default_factory=GpConfig)
    reduction: str = "mean"
    adam_betas: tuple = (0.0, 0.9)
    train_conditioning: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.batch < 1 or self.epochs < 1:
            raise ValueError("lr, batch, and epochs must be positive")
        min_critic = 1 if self.weights.w_adv > 0 else 0
        if self.n_critic < min_critic:
            raise ValueError(
                "n_critic must be positive while the adversarial weight is")


@dataclass
class TrainedStage:
    """A trained stage plus everything needed to sample from it."""

    stage: object
    log: list
    condition_range: tuple = None


class _BatchStream:
    """Endless shuffled index batches; reshuffles when the epoch runs out."""

    def __init__(self, n, batch, rng):
        if batch > n:
            raise ValueError(f"batch size {batch} exceeds dataset size {n}")
        self.n, self.batch, self.rng = n, batch, rng
        self._order = rng.permutation(n)
        self._at = 0

    def take(self):
        if self._at + self.batch > self.n:
            self._order = self.rng.permutation(self.n)
            self._at = 0
        idx = self._order[self._at:self._at + self.batch]
        self._at += self.batch
        return idx


def _zero_grads(stage):
    for p in stage.parameters():
        p.zero_grad()


def _assert_finite_params(stage, step):
    for p in stage.parameters():
        if not np.all(np.isfinite(p.value.data)):
            raise TrainingDiverged(
                f"parameter {p.id} became non-finite after step {step}")


def _assert_finite_losses(step, **terms):
    for name, v in terms.items():
        if not np.isfinite(v):
            raise TrainingDiverged(
                f"{name}={v} at step {step}; aborting "
                f"(all terms: {terms})")


def _train_loop(stage, volumes, guidance_of, cfg):
    """Shared schedule. ``guidance_of(idx)`` returns the decoder's second
    argument for a batch of sample indices."""
    n = volumes.shape[0]
    rng = np.random.default_rng([cfg.seed, 1])
    stream = _BatchStream(n, cfg.batch, rng)

    gen_params = list(stage.generator_parameters())
    if not cfg.train_conditioning:
        # frozen zero-init heads keep the modulation an exact identity
        mod_ids = {p.id for m in stage.decoder.mods for p in m.parameters()}
        gen_params = [p for p in gen_params if p.id not in mod_ids]
        for m in stage.decoder.mods:
            m.frozen = True
    adam_g = Adam(gen_params, lr=cfg.lr, betas=cfg.adam_betas)
    use_critic = cfg.weights.w_adv > 0
    adam_c = Adam(stage.critic_parameters(), lr=cfg.lr,
                  betas=cfg.adam_betas) if use_critic else None

    latent = cfg.net.latent_dim
    steps_per_epoch = max(n // cfg.batch, 1)
    total_steps = cfg.epochs * steps_per_epoch
    log = []

    def generate(idx):
        x_r = Tensor(volumes[idx][:, None])
        mu, lv = stage.encoder(x_r)
        eps = Tensor(rng.standard_normal((len(idx), latent)).astype(np.float32))
        z = reparameterize(mu, lv, eps)
        return x_r, mu, lv, stage.decoder(z.z, guidance_of(idx))

    for step in range(1, total_steps + 1):
        ld_vals, gp_vals = [], []
        if use_critic:
            for _ in range(cfg.n_critic):
                idx = stream.take()
                with T.no_grad():
                    x_r, _, _, x_g = generate(idx)
                _zero_grads(stage)
                total_c, l_d, gp = critic_loss(
                    stage.critic, x_r, x_g, cfg.gp, rng)
                _assert_finite_losses(step, l_d=l_d.item(), gp_term=gp.item())
                total_c.backward()
                adam_c.step()
                ld_vals.append(l_d.item())
                gp_vals.append(gp.item())

        idx = stream.take()
        _zero_grads(stage)
        x_r, mu, lv, x_g = generate(idx)
        l_rec = recon_mse(x_g, x_r, cfg.reduction)
        l_kl = kl_gaussian(mu, lv, cfg.reduction)
        l_g = gen_adv_loss(stage.critic, x_g) if use_critic else Tensor(0.0)
        total_g = generator_total(l_rec, l_kl, l_g, cfg.weights)
        _assert_finite_losses(step, l_rec=l_rec.item(), l_kl=l_kl.item(),
                              l_g=l_g.item())
        total_g.backward()
        adam_g.step()
        _assert_finite_params(stage, step)

        l_d_mean = float(np.mean(ld_vals)) if ld_vals else 0.0
        gp_mean = float(np.mean(gp_vals)) if gp_vals else 0.0
        log.append(LossReport(
            l_rec=l_rec.item(), l_kl=l_kl.item(), l_g=l_g.item(),
            l_d=l_d_mean, gp_term=gp_mean,
            total_gen=total_g.item(),
            total_critic=l_d_mean + gp_mean,
        ))
    return log


def train_mask_stage(samples, cfg):
    """Stage one: learn the mask distribution, conditioned on lesion size."""
    if not samples:
        raise ValueError("empty dataset")
    masks = np.stack([p.mask.data for p in samples]).astype(np.float32)
    conds = np.array([encode_condition(p.mask).values for p in samples],
                     dtype=np.float32)
    stage = build_mask_stage(cfg.net, np.random.default_rng([cfg.seed, 0]))
    log = _train_loop(stage, masks, lambda idx: conds[idx], cfg)
    rng_range = (float(conds.min()), float(conds.max()))
    return TrainedStage(stage=stage, log=log, condition_range=rng_range)


def train_lesion_stage(samples, cfg):
    """Stage two: learn lesion appearance, guided by the paired mask."""
    if not samples:
        raise ValueError("empty dataset")
    lesions = np.stack([p.lesion for p in samples]).astype(np.float32)
    masks = np.stack([p.mask.data for p in samples]).astype(np.float32)
    stage = build_lesion_stage(cfg.net, np.random.default_rng([cfg.seed, 0]))
    log = _train_loop(stage, lesions, lambda idx: masks[idx], cfg)
    return TrainedStage(stage=stage, log=log)


def write_loss_csv(path, log):
    lines = [LOSS_CSV_HEADER]
    for i, row in enumerate(log, start=1):
        lines.append(f"{i},{row.l_rec:.8g},{row.l_kl:.8g},{row.l_g:.8g},"
                     f"{row.l_d:.8g},{row.gp_term:.8g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
