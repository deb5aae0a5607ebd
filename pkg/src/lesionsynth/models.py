"""The two-stage synthesis networks: encoders, conditioned decoders, critics.

Stage one learns lesion shape: a VAE whose decoder is steered by a size
condition (CEB).  Stage two learns lesion appearance: a VAE whose decoder is
steered by a binary mask (MEB).  Each stage carries its own Wasserstein
critic; the two stages share no parameters and are trained individually.

Encoder: ``levels`` blocks of stride-2 convolution, instance norm, leaky
ReLU, then two linear heads for (mu, logvar).  Decoder: linear projection to
the coarsest grid, then ``levels`` blocks of nearest-upsample, convolution,
instance norm, modulation, leaky ReLU, and a final convolution squashed by a
sigmoid.  Critic: strided convolutions and leaky ReLU only (no normalization,
so the gradient penalty acts per sample), then a linear map to one score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tensor_conv import nearest_upsample3d
from .nn import Conv3dLayer, Linear, instance_norm3d, LEAKY_SLOPE
from .conditioning import ConditionEmbedding, MaskEmbedding, MaskVolume

__all__ = [
    "NetConfig",
    "LatentSample",
    "Encoder",
    "MaskDecoder",
    "LesionDecoder",
    "Critic",
    "SynthesisStage",
    "build_mask_stage",
    "build_lesion_stage",
    "reparameterize",
]


@dataclass(frozen=True)
class NetConfig:
    """Geometry of one stage's networks."""

    side: int = 32
    levels: int = 3
    base_channels: int = 16
    latent_dim: int = 64

    def __post_init__(self):
        if self.side < 2 or self.side & (self.side - 1):
            raise ValueError(f"side must be a power of two, got {self.side}")
        if self.side // (2 ** self.levels) < 2:
            raise ValueError(
                f"side {self.side} with {self.levels} levels leaves a coarsest "
                f"grid below 2")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be at least 1")

    @property
    def coarse_side(self):
        return self.side // (2 ** self.levels)

    def channels_at(self, level):
        """Width after the level-th downsampling block (doubling schedule)."""
        return self.base_channels * (2 ** level)


@dataclass(frozen=True)
class LatentSample:
    """One reparameterized draw; z = mu + exp(0.5*logvar)*eps holds exactly."""

    mu: Tensor
    logvar: Tensor
    eps: Tensor
    z: Tensor


def reparameterize(mu, logvar, eps):
    """z = mu + exp(0.5 * logvar) * eps, differentiable in mu and logvar."""
    if mu.shape != logvar.shape or mu.shape != eps.shape:
        raise ValueError(
            f"mismatched latent shapes: {mu.shape}, {logvar.shape}, {eps.shape}")
    z = mu + T.exp(logvar * 0.5) * eps
    return LatentSample(mu=mu, logvar=logvar, eps=eps, z=z)


class Encoder:
    def __init__(self, cfg, rng, id):
        self.cfg = cfg
        self.blocks = []
        c_in = 1
        for lv in range(cfg.levels):
            c_out = cfg.channels_at(lv)
            self.blocks.append(
                Conv3dLayer(c_in, c_out, rng, f"{id}.block{lv}.conv", stride=2))
            c_in = c_out
        flat = c_in * cfg.coarse_side ** 3
        self.mu_head = Linear(flat, cfg.latent_dim, rng, f"{id}.mu")
        self.logvar_head = Linear(flat, cfg.latent_dim, rng, f"{id}.logvar")
        self._flat = flat

    def __call__(self, x):
        cfg = self.cfg
        if x.ndim != 5 or x.shape[1] != 1 or x.shape[2:] != (cfg.side,) * 3:
            raise ValueError(
                f"encoder expects [N,1,{cfg.side},{cfg.side},{cfg.side}], "
                f"got {x.shape}")
        h = x
        for conv in self.blocks:
            h = T.leaky_relu(instance_norm3d(conv(h)), alpha=LEAKY_SLOPE)
        h = T.reshape(h, (h.shape[0], self._flat))
        return self.mu_head(h), self.logvar_head(h)

    def parameters(self):
        ps = []
        for b in self.blocks:
            ps += b.parameters()
        return ps + self.mu_head.parameters() + self.logvar_head.parameters()


class _DecoderCore:
    """Shared decoder topology; the modulation source differs per subclass."""

    def __init__(self, cfg, rng, id):
        self.cfg = cfg
        c_top = cfg.channels_at(cfg.levels - 1)
        self._c_top = c_top
        self.project = Linear(cfg.latent_dim,
                              c_top * cfg.coarse_side ** 3, rng, f"{id}.project")
        self.convs = []
        self.mods = []
        c_in = c_top
        for lv in reversed(range(cfg.levels)):
            c_out = cfg.base_channels * (2 ** max(lv - 1, 0))
            self.convs.append(
                Conv3dLayer(c_in, c_out, rng, f"{id}.up{lv}.conv"))
            self.mods.append(self._make_modulation(c_out, rng, f"{id}.up{lv}.mod"))
            c_in = c_out
        self.head = Conv3dLayer(c_in, 1, rng, f"{id}.head")

    def _make_modulation(self, channels, rng, id):
        raise NotImplementedError

    def _decode(self, z, guidance):
        cfg = self.cfg
        if z.ndim != 2 or z.shape[1] != cfg.latent_dim:
            raise ValueError(f"z must be [N,{cfg.latent_dim}], got {z.shape}")
        n = z.shape[0]
        h = T.reshape(self.project(z),
                      (n, self._c_top) + (cfg.coarse_side,) * 3)
        for conv, mod in zip(self.convs, self.mods):
            h = nearest_upsample3d(h, 2)
            h = instance_norm3d(conv(h))
            h = mod(h, guidance)
            h = T.leaky_relu(h, alpha=LEAKY_SLOPE)
        return T.sigmoid(self.head(h))

    def parameters(self):
        ps = self.project.parameters()
        for conv, mod in zip(self.convs, self.mods):
            ps += conv.parameters() + mod.parameters()
        return ps + self.head.parameters()


class MaskDecoder(_DecoderCore):
    """Decoder steered by a size condition through CEB blocks."""

    def __init__(self, cfg, rng, id, condition_dim=1):
        self.condition_dim = condition_dim
        super().__init__(cfg, rng, id)

    def _make_modulation(self, channels, rng, id):
        return ConditionEmbedding(self.condition_dim, channels, rng, id)

    def __call__(self, z, c):
        return self._decode(z, c)


class LesionDecoder(_DecoderCore):
    """Decoder steered by a binary mask through MEB blocks."""

    def _make_modulation(self, channels, rng, id):
        return MaskEmbedding(channels, rng, id)

    def __call__(self, z, masks):
        m = masks.data if isinstance(masks, MaskVolume) else np.asarray(masks)
        side = m.shape[-1]
        if side != self.cfg.side:
            raise ValueError(
                f"mask side {side} does not match config side {self.cfg.side}")
        return self._decode(z, m)


class Critic:
    """Unbounded per-sample score; convolutions and leaky ReLU only."""

    def __init__(self, cfg, rng, id):
        self.cfg = cfg
        self.blocks = []
        c_in = 1
        for lv in range(cfg.levels):
            c_out = cfg.channels_at(lv)
            self.blocks.append(
                Conv3dLayer(c_in, c_out, rng, f"{id}.block{lv}.conv", stride=2))
            c_in = c_out
        flat = c_in * cfg.coarse_side ** 3
        self.head = Linear(flat, 1, rng, f"{id}.head")
        self._flat = flat

    def __call__(self, x):
        cfg = self.cfg
        if x.ndim != 5 or x.shape[1] != 1 or x.shape[2:] != (cfg.side,) * 3:
            raise ValueError(
                f"critic expects [N,1,{cfg.side},{cfg.side},{cfg.side}], "
                f"got {x.shape}")
        h = x
        for conv in self.blocks:
            h = T.leaky_relu(conv(h), alpha=LEAKY_SLOPE)
        h = T.reshape(h, (h.shape[0], self._flat))
        return self.head(h)

    def parameters(self):
        ps = []
        for b in self.blocks:
            ps += b.parameters()
        return ps + self.head.parameters()


@dataclass
class SynthesisStage:
    """One VAE-GAN stage: encoder, conditioned decoder, critic."""

    cfg: NetConfig
    encoder: Encoder
    decoder: object
    critic: Critic

    def generator_parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def critic_parameters(self):
        return self.critic.parameters()

    def parameters(self):
        return self.generator_parameters() + self.critic_parameters()


def build_mask_stage(cfg, rng, prefix="mask_net", condition_dim=1):
    return SynthesisStage(
        cfg=cfg,
        encoder=Encoder(cfg, rng, f"{prefix}.enc"),
        decoder=MaskDecoder(cfg, rng, f"{prefix}.dec", condition_dim=condition_dim),
        critic=Critic(cfg, rng, f"{prefix}.critic"),
    )


def build_lesion_stage(cfg, rng, prefix="lesion_net"):
    return SynthesisStage(
        cfg=cfg,
        encoder=Encoder(cfg, rng, f"{prefix}.enc"),
        decoder=LesionDecoder(cfg, rng, f"{prefix}.dec"),
        critic=Critic(cfg, rng, f"{prefix}.critic"),
    )
