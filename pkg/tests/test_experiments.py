"""Downstream segmentation experiment pieces."""

import json

import numpy as np
import pytest

from lesionsynth.tensor import Tensor
from lesionsynth.experiments import (Segmenter, SegTrainConfig, dice_bce_loss,
                                     train_segmenter, evaluate_segmenter,
                                     make_synthetic_pairs, DownstreamReport,
                                     run_downstream_experiment)
from lesionsynth.models import NetConfig
from lesionsynth.training import TrainConfig, train_mask_stage, train_lesion_stage
from lesionsynth.phantoms import PhantomSpec, make_phantoms


@pytest.fixture(scope="module")
def tiny_stages():
    pairs = make_phantoms(
        PhantomSpec(side=8, count=8, radius_range=(1, 2), host_side=12), seed=0)
    cfg = TrainConfig(net=NetConfig(side=8, levels=2, base_channels=4,
                                    latent_dim=8),
                      lr=1e-3, batch=4, epochs=6, n_critic=1, seed=0)
    return train_mask_stage(pairs, cfg), train_lesion_stage(pairs, cfg)


class TestDiceBceLoss:
    def test_hand_value_half_overlap(self):
        # prob 1 on two voxels, target 1 on one of them, over 4 voxels
        prob = Tensor(np.array([[[0.999, 0.999], [0.001, 0.001]]],
                               dtype=np.float32).reshape(1, 1, 2, 2, 1))
        tgt = Tensor(np.array([[[1.0, 0.0], [0.0, 0.0]]],
                              dtype=np.float32).reshape(1, 1, 2, 2, 1))
        loss = dice_bce_loss(prob, tgt).item()
        # dice term ~ 2/3, bce ~ -(log .999 + log .001 + 2 log .999)/4
        dice = 2 * 0.999 / (1.998 + 1.0)
        bce = -(np.log(0.999 + 1e-6) + np.log(1.000001 - 0.999)
                + 2 * np.log(1.000001 - 0.001)) / 4
        assert loss == pytest.approx((1 - dice) + bce, rel=1e-3)

    def test_perfect_prediction_near_zero(self):
        tgt = np.zeros((2, 1, 4, 4, 4), dtype=np.float32)
        tgt[:, :, 1:3, 1:3, 1:3] = 1.0
        eps = 1e-5
        prob = Tensor(np.clip(tgt, eps, 1 - eps))
        assert dice_bce_loss(prob, Tensor(tgt)).item() < 1e-3

    def test_gradient_flows(self):
        rng = np.random.default_rng(0)
        logits = Tensor(rng.standard_normal((1, 1, 4, 4, 4))
                        .astype(np.float32), requires_grad=True)
        from lesionsynth import tensor as T
        prob = T.sigmoid(logits)
        tgt = Tensor((rng.random((1, 1, 4, 4, 4)) < 0.3).astype(np.float32))
        dice_bce_loss(prob, tgt).backward()
        assert np.all(np.isfinite(logits.grad.data))
        assert np.abs(logits.grad.data).max() > 0


class TestSegmenter:
    def test_output_shape_and_range(self):
        net = Segmenter(channels=4, rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).random((2, 1, 8, 8, 8))
                   .astype(np.float32))
        out = net(x)
        assert out.data.shape == (2, 1, 8, 8, 8)
        assert out.data.min() > 0.0 and out.data.max() < 1.0

    def test_training_reduces_loss_and_evaluates(self):
        spec = PhantomSpec(side=8, count=8, radius_range=(1, 2), host_side=12)
        pairs = make_phantoms(spec, seed=3)
        vols = np.stack([p.lesion for p in pairs])
        masks = np.stack([p.mask.data for p in pairs]).astype(np.float32)
        cfg = SegTrainConfig(channels=4, steps=40, seed=0)
        net, log = train_segmenter(vols, masks, cfg)
        assert log[-1] < log[0]
        report = evaluate_segmenter(net, vols, masks)
        assert 0.0 <= report.dice <= 1.0
        assert report.hd95_vox >= report.asd_vox >= 0.0

    def test_empty_prediction_scored_not_crashed(self):
        net = Segmenter(channels=4, rng=np.random.default_rng(0))

        class _Zero:
            def __call__(self, x):
                return Tensor(np.zeros_like(x.data))
        vols = np.random.default_rng(2).random((2, 8, 8, 8)).astype(np.float32)
        masks = np.zeros((2, 8, 8, 8), dtype=np.float32)
        masks[:, 2:4, 2:4, 2:4] = 1.0
        report = evaluate_segmenter(_Zero(), vols, masks)
        assert report.dice == 0.0
        assert report.hd95_vox > 0  # worst-case diagonal fallback


class TestSyntheticPairs:
    def test_contracts(self, tiny_stages):
        mask_stage, lesion_stage = tiny_stages
        vols, masks = make_synthetic_pairs(mask_stage, lesion_stage,
                                           count=3, seed=5)
        assert vols.shape == (3, 8, 8, 8) and masks.shape == (3, 8, 8, 8)
        assert vols.dtype == np.float32
        assert set(np.unique(masks)) <= {0.0, 1.0}
        assert vols.min() >= 0.0 and vols.max() <= 1.0
        for m in masks:
            assert m.sum() > 0

    def test_deterministic(self, tiny_stages):
        mask_stage, lesion_stage = tiny_stages
        a = make_synthetic_pairs(mask_stage, lesion_stage, count=2, seed=6)
        b = make_synthetic_pairs(mask_stage, lesion_stage, count=2, seed=6)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestDownstream:
    def test_report_json_shape(self):
        from lesionsynth.metrics import MetricsReport
        seg = dict(dice=0.8, jaccard=0.7, asd_vox=1.0, hd95_vox=2.0)
        rep = DownstreamReport(raw_only=MetricsReport(**seg),
                               augmented=MetricsReport(**seg),
                               synth_count=10)
        parsed = json.loads(rep.to_json())
        assert set(parsed) == {"raw_only", "augmented", "synth_count"}
        assert set(parsed["raw_only"]) == {"dice", "jaccard", "asd_vox",
                                           "hd95_vox"}

    def test_end_to_end_small(self, tiny_stages):
        mask_stage, lesion_stage = tiny_stages
        spec = PhantomSpec(side=8, count=8, radius_range=(1, 2), host_side=12)
        train_pairs = make_phantoms(spec, seed=7)
        held_pairs = make_phantoms(
            PhantomSpec(side=8, count=4, radius_range=(1, 2), host_side=12),
            seed=8)
        cfg = SegTrainConfig(channels=4, steps=30, seed=0)
        rep = run_downstream_experiment(train_pairs, held_pairs, mask_stage,
                                        lesion_stage, cfg, synth_count=4)
        assert rep.synth_count == 4
        for arm in (rep.raw_only, rep.augmented):
            assert 0.0 <= arm.dice <= 1.0
            assert np.isfinite(arm.hd95_vox)
