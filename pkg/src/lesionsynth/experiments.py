"""Downstream segmentation experiment: does synthetic data help a segmenter.

Mirrors the augmentation study: train the same small encoder-decoder twice,
once on raw pairs only and once on raw plus synthesized pairs, then score
both on a held-out split.  The segmenter itself is deliberately modest; the
question is the data, not the architecture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, tensor_sum, tensor_mean, no_grad
from .tensor_conv import nearest_upsample3d
from .nn import Conv3dLayer, Adam, instance_norm3d
from .conditioning import MaskVolume
from .sampling import sample_masks, sample_lesions, composite
from .metrics import MetricsReport, dice, jaccard, asd, hd95
from .training import _BatchStream, _assert_finite_params

__all__ = [
    "Segmenter",
    "SegTrainConfig",
    "DownstreamReport",
    "dice_bce_loss",
    "train_segmenter",
    "evaluate_segmenter",
    "make_synthetic_pairs",
    "run_downstream_experiment",
]

_EPS = 1e-6


class Segmenter:
    """Two-level encoder-decoder with an additive skip connection."""

    def __init__(self, channels, rng):
        c = channels
        self.enc0 = Conv3dLayer(1, c, rng, "seg.enc0")
        self.enc1 = Conv3dLayer(c, 2 * c, rng, "seg.enc1", stride=2)
        self.mid = Conv3dLayer(2 * c, 2 * c, rng, "seg.mid")
        self.dec = Conv3dLayer(2 * c, c, rng, "seg.dec")
        self.head = Conv3dLayer(c, 1, rng, "seg.head")

    def parameters(self):
        out = []
        for layer in (self.enc0, self.enc1, self.mid, self.dec, self.head):
            out.extend(layer.parameters())
        return out

    def __call__(self, x):
        s = T.leaky_relu(instance_norm3d(self.enc0(x)))
        h = T.leaky_relu(instance_norm3d(self.enc1(s)))
        h = T.leaky_relu(instance_norm3d(self.mid(h)))
        h = T.leaky_relu(instance_norm3d(self.dec(nearest_upsample3d(h, 2))))
        h = h + s
        return T.sigmoid(self.head(h))


def dice_bce_loss(prob, target):
    """Soft Dice plus binary cross-entropy, both batch means."""
    p = prob.reshape((prob.shape[0], -1))
    g = target.reshape((target.shape[0], -1))
    inter = tensor_sum(p * g, axis=1)
    denom = tensor_sum(p, axis=1) + tensor_sum(g, axis=1)
    dice_term = tensor_mean((inter * 2.0 + _EPS) / (denom + _EPS))
    bce = tensor_mean(T.log(p + _EPS) * g + T.log((1.0 + _EPS) - p) * (1.0 - g))
    return (1.0 - dice_term) - bce


@dataclass
class SegTrainConfig:
    channels: int = 8
    lr: float = 1e-3
    batch: int = 8
    steps: int = 150
    seed: int = 0


def train_segmenter(volumes, masks, cfg):
    volumes = np.asarray(volumes, dtype=np.float32)
    masks = np.asarray(masks, dtype=np.float32)
    if volumes.shape != masks.shape:
        raise ValueError(f"volumes {volumes.shape} vs masks {masks.shape}")
    rng = np.random.default_rng([cfg.seed, 3])
    net = Segmenter(cfg.channels, np.random.default_rng([cfg.seed, 2]))
    opt = Adam(net.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
    stream = _BatchStream(len(volumes), min(cfg.batch, len(volumes)), rng)
    log = []
    for step in range(cfg.steps):
        idx = stream.take()
        x = Tensor(volumes[idx][:, None])
        g = Tensor(masks[idx][:, None])
        loss = dice_bce_loss(net(x), g)
        value = loss.item()
        if not np.isfinite(value):
            raise RuntimeError(f"segmenter loss non-finite at step {step + 1}")
        loss.backward()
        opt.step()
        _assert_finite_params(net, step)
        log.append(value)
    return net, log


def evaluate_segmenter(net, volumes, masks, threshold=0.5, batch=8):
    """Mean Dice/Jaccard/ASD/HD95 over a held-out split.

    Surface distances are undefined against an empty prediction; those
    cases score the volume diagonal instead so they stay visibly bad
    rather than crashing the report.
    """
    volumes = np.asarray(volumes, dtype=np.float32)
    preds = []
    for at in range(0, len(volumes), batch):
        with no_grad():
            p = net(Tensor(volumes[at:at + batch][:, None])).data
        preds.append(p[:, 0] > threshold)
    preds = np.concatenate(preds)
    worst = float(np.linalg.norm(volumes.shape[1:]))
    ds, js, asds, hds = [], [], [], []
    for pred, m in zip(preds, masks):
        ref = m.data.astype(bool) if isinstance(m, MaskVolume) else np.asarray(m) > 0.5
        ds.append(dice(ref, pred))
        js.append(jaccard(ref, pred))
        if pred.any() and ref.any():
            asds.append(asd(ref, pred))
            hds.append(hd95(ref, pred))
        else:
            asds.append(worst)
            hds.append(worst)
    return MetricsReport(
        dice=float(np.mean(ds)), jaccard=float(np.mean(js)),
        asd_vox=float(np.mean(asds)), hd95_vox=float(np.mean(hds)))


def make_synthetic_pairs(mask_stage, lesion_stage, count, seed,
                         background_mean=0.3, noise_std=0.05):
    """Sample (volume, mask) training pairs from the two trained stages."""
    masks = sample_masks(mask_stage, count, seed=[seed, 20])
    lesions = sample_lesions(lesion_stage, masks, seed=[seed, 21])
    rng = np.random.default_rng([seed, 22])
    side = masks[0].side
    volumes = []
    for mask, lesion in zip(masks, lesions):
        host = background_mean + noise_std * rng.standard_normal((side,) * 3)
        host = np.clip(host, 0.0, 1.0).astype(np.float32)
        volumes.append(composite(host, lesion, mask, (0, 0, 0)))
    return (np.stack(volumes),
            np.stack([m.data for m in masks]).astype(np.float32))


@dataclass
class DownstreamReport:
    """Held-out segmentation scores for the raw-only and augmented arms."""
    raw_only: MetricsReport
    augmented: MetricsReport
    synth_count: int

    def to_json(self):
        import json
        return json.dumps({
            "raw_only": self.raw_only.to_dict(),
            "augmented": self.augmented.to_dict(),
            "synth_count": self.synth_count,
        }, indent=2, sort_keys=True)


def run_downstream_experiment(train_pairs, held_pairs, mask_stage,
                              lesion_stage, cfg, synth_count=100):
    raw_v = np.stack([p.lesion for p in train_pairs])
    raw_m = np.stack([p.mask.data for p in train_pairs]).astype(np.float32)
    syn_v, syn_m = make_synthetic_pairs(mask_stage, lesion_stage,
                                        synth_count, cfg.seed)
    held_v = np.stack([p.lesion for p in held_pairs])
    held_m = np.stack([p.mask.data for p in held_pairs]).astype(np.float32)

    net_raw, _ = train_segmenter(raw_v, raw_m, cfg)
    rep_raw = evaluate_segmenter(net_raw, held_v, held_m)
    net_aug, _ = train_segmenter(np.concatenate([raw_v, syn_v]),
                                 np.concatenate([raw_m, syn_m]), cfg)
    rep_aug = evaluate_segmenter(net_aug, held_v, held_m)
    return DownstreamReport(raw_only=rep_raw, augmented=rep_aug,
                            synth_count=synth_count)
