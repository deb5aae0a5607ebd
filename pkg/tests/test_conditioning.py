"""Condition encoding and the two modulation blocks."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lesionsynth.tensor import Tensor
from lesionsynth.conditioning import (ConditionVector, MaskVolume,
                                      encode_condition,
                                      mask_downsample_nearest,
                                      ConditionEmbedding, MaskEmbedding)

from helpers import check_grads


def _ball_mask(side, r):
    c = (side - 1) / 2.0
    g = np.indices((side,) * 3)
    m = ((g - c) ** 2).sum(axis=0) <= r * r
    return m.astype(np.uint8)


class TestMaskVolume:
    def test_validations(self):
        with pytest.raises(ValueError):
            MaskVolume(np.zeros((4, 4, 5), dtype=np.uint8))  # not a cube
        with pytest.raises(ValueError):
            MaskVolume(np.zeros((5, 5, 5), dtype=np.uint8))  # not a power of two
        with pytest.raises(ValueError):
            MaskVolume(np.full((4, 4, 4), 2, dtype=np.uint8))  # not binary

    def test_foreground_count(self):
        m = _ball_mask(8, 2)
        assert MaskVolume(m).foreground == int(m.sum())


class TestEncodeCondition:
    def test_log_ratio_values(self):
        side = 8
        m = np.zeros((side,) * 3, dtype=np.uint8)
        m[0, 0, 0] = 1
        assert encode_condition(MaskVolume(m)).values[0] == 0.0  # log 1 = 0
        full = MaskVolume(np.ones((side,) * 3, dtype=np.uint8))
        assert abs(encode_condition(full).values[0] - 1.0) < 1e-12

    def test_monotone_in_size(self):
        sizes = [encode_condition(MaskVolume(_ball_mask(16, r))).values[0]
                 for r in (2, 3, 5)]
        assert sizes[0] < sizes[1] < sizes[2]

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            encode_condition(MaskVolume(np.zeros((4, 4, 4), dtype=np.uint8)))

    @given(st.integers(2, 4), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_range_is_unit_interval(self, log_side, seed):
        side = 2 ** log_side
        rng = np.random.default_rng(seed)
        m = (rng.random((side,) * 3) < 0.4).astype(np.uint8)
        if not m.any():
            m[0, 0, 0] = 1
        v = encode_condition(MaskVolume(m)).values[0]
        assert 0.0 <= v <= 1.0


class TestMaskDownsample:
    def test_nearest_semantics(self):
        m = np.zeros((8, 8, 8), dtype=np.uint8)
        m[0, 0, 0] = 1
        m[4, 4, 4] = 1
        down = mask_downsample_nearest(m, 4)
        assert down.shape == (4, 4, 4)
        assert down[0, 0, 0] == 1 and down[2, 2, 2] == 1
        assert down.sum() == 2

    def test_preserves_binarity(self):
        rng = np.random.default_rng(0)
        m = (rng.random((16, 16, 16)) < 0.5).astype(np.uint8)
        down = mask_downsample_nearest(m, 4)
        assert set(np.unique(down)) <= {0, 1}

    def test_indivisible_rejected(self):
        with pytest.raises(ValueError):
            mask_downsample_nearest(np.zeros((8, 8, 8), dtype=np.uint8), 3)


class TestConditionEmbedding:
    def test_identity_at_init(self):
        rng = np.random.default_rng(1)
        ceb = ConditionEmbedding(1, 6, rng, "ceb")
        h = Tensor(rng.standard_normal((2, 6, 4, 4, 4)).astype(np.float32))
        c = np.array([[0.3], [0.9]], dtype=np.float32)
        out = ceb(h, c)
        assert np.array_equal(out.data, h.data)  # zero-init heads: exact

    def test_modulation_after_head_nudge(self):
        rng = np.random.default_rng(2)
        ceb = ConditionEmbedding(1, 4, rng, "ceb")
        ceb.gamma_head.weight.value.data[...] = 1.0
        ceb.beta_head.bias.value.data[...] = 0.5
        h = Tensor(np.ones((1, 4, 2, 2, 2), dtype=np.float32))
        out = ceb(h, np.array([[1.0]], dtype=np.float32))
        assert not np.array_equal(out.data, h.data)

    def test_distinct_conditions_diverge(self):
        rng = np.random.default_rng(3)
        ceb = ConditionEmbedding(1, 4, rng, "ceb")
        for p in ceb.parameters():
            p.value.data += 0.05 * np.random.default_rng(4).standard_normal(
                p.value.data.shape).astype(np.float32)
        h = Tensor(np.ones((2, 4, 2, 2, 2), dtype=np.float32))
        out = ceb(h, np.array([[0.0], [1.0]], dtype=np.float32)).data
        assert np.abs(out[0] - out[1]).max() > 1e-6

    def test_frozen_is_identity(self):
        rng = np.random.default_rng(5)
        ceb = ConditionEmbedding(1, 4, rng, "ceb")
        for p in ceb.parameters():
            p.value.data += 1.0
        ceb.frozen = True
        h = Tensor(np.ones((1, 4, 2, 2, 2), dtype=np.float32))
        assert ceb(h, np.array([[0.7]], dtype=np.float32)) is h

    def test_batch_mismatch_rejected(self):
        ceb = ConditionEmbedding(1, 4, np.random.default_rng(0), "ceb")
        h = Tensor(np.ones((2, 4, 2, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            ceb(h, np.array([[0.5]], dtype=np.float32))

    def test_gradients_flow_to_heads(self):
        rng = np.random.default_rng(6)
        ceb = ConditionEmbedding(1, 3, rng, "ceb")
        h = Tensor(rng.standard_normal((2, 3, 2, 2, 2)).astype(np.float32))
        out = ceb(h, np.array([[0.2], [0.8]], dtype=np.float32))
        (out * out).sum().backward()
        assert ceb.gamma_head.weight.grad is not None
        assert ceb.shared.weight.grad is not None


class TestMaskEmbedding:
    def test_identity_at_init(self):
        rng = np.random.default_rng(7)
        meb = MaskEmbedding(4, rng, "meb")
        h = Tensor(rng.standard_normal((2, 4, 4, 4, 4)).astype(np.float32))
        masks = np.stack([_ball_mask(8, 2), _ball_mask(8, 3)]).astype(np.float32)
        out = meb(h, masks)
        assert np.array_equal(out.data, h.data)

    def test_spatial_modulation_after_nudge(self):
        rng = np.random.default_rng(8)
        meb = MaskEmbedding(2, rng, "meb")
        meb.gamma_head.weight.value.data[...] = 0.3
        h = Tensor(np.ones((1, 2, 4, 4, 4), dtype=np.float32))
        ball = _ball_mask(4, 1).astype(np.float32)[None]
        hollow = np.zeros_like(ball)
        out_ball = meb(h, ball).data
        out_hollow = meb(h, hollow).data
        assert np.abs(out_ball - out_hollow).max() > 1e-6

    def test_mask_downsampled_to_feature_side(self):
        rng = np.random.default_rng(9)
        meb = MaskEmbedding(3, rng, "meb")
        h = Tensor(np.ones((1, 3, 4, 4, 4), dtype=np.float32))
        mask16 = np.zeros((1, 16, 16, 16), dtype=np.float32)
        mask16[0, 0, 0, 0] = 1.0
        out = meb(h, mask16)  # 16 -> 4 must divide cleanly
        assert out.data.shape == (1, 3, 4, 4, 4)

    def test_frozen_is_identity(self):
        rng = np.random.default_rng(10)
        meb = MaskEmbedding(2, rng, "meb")
        meb.gamma_head.weight.value.data[...] = 5.0
        meb.frozen = True
        h = Tensor(np.ones((1, 2, 4, 4, 4), dtype=np.float32))
        assert meb(h, np.ones((1, 4, 4, 4), dtype=np.float32)) is h

    def test_gradients_reach_shared_conv(self):
        rng = np.random.default_rng(11)
        meb = MaskEmbedding(2, rng, "meb")
        h = Tensor(rng.standard_normal((1, 2, 4, 4, 4)).astype(np.float32),
                   requires_grad=True)
        out = meb(h, np.ones((1, 8, 8, 8), dtype=np.float32))
        (out * out).sum().backward()
        assert meb.shared.weight.grad is not None
        assert h.grad is not None
