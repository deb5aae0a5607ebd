"""Synthesis networks: shapes, ranges, reparameterization, determinism."""

import numpy as np
import pytest

from lesionsynth.tensor import Tensor, no_grad
from lesionsynth.models import (NetConfig, Encoder, Critic, reparameterize,
                                build_mask_stage, build_lesion_stage)


def _cfg(side=8, levels=2, base=4, latent=6):
    return NetConfig(side=side, levels=levels, base_channels=base,
                     latent_dim=latent)


class TestNetConfig:
    def test_channel_doubling(self):
        cfg = _cfg(base=4, levels=3, side=16)
        assert [cfg.channels_at(i) for i in range(3)] == [4, 8, 16]
        assert cfg.coarse_side == 2

    def test_validations(self):
        with pytest.raises(ValueError):
            NetConfig(side=12, levels=2, base_channels=4, latent_dim=4)
        with pytest.raises(ValueError):
            NetConfig(side=8, levels=3, base_channels=4, latent_dim=4)


class TestReparameterize:
    def test_exact_formula(self):
        rng = np.random.default_rng(0)
        mu = rng.standard_normal((3, 5)).astype(np.float32)
        logvar = rng.standard_normal((3, 5)).astype(np.float32)
        eps = rng.standard_normal((3, 5)).astype(np.float32)
        s = reparameterize(Tensor(mu), Tensor(logvar), eps)
        want = mu + np.exp(0.5 * logvar) * eps
        assert np.allclose(s.z.data, want, atol=1e-6)
        assert np.array_equal(s.mu.data, mu)
        assert np.array_equal(s.eps, eps)

    def test_zero_eps_returns_mean(self):
        mu = np.full((2, 3), 1.5, dtype=np.float32)
        s = reparameterize(Tensor(mu), Tensor(np.zeros((2, 3), np.float32)),
                           np.zeros((2, 3), np.float32))
        assert np.array_equal(s.z.data, mu)

    def test_gradient_flows_through_mu_and_logvar(self):
        mu = Tensor(np.ones((1, 2), np.float32), requires_grad=True)
        lv = Tensor(np.zeros((1, 2), np.float32), requires_grad=True)
        s = reparameterize(mu, lv, np.ones((1, 2), np.float32))
        s.z.sum().backward()
        assert np.allclose(mu.grad.data, 1.0)
        assert np.allclose(lv.grad.data, 0.5)  # d/dlv exp(lv/2)·1 at lv=0


class TestEncoder:
    def test_output_heads(self):
        cfg = _cfg()
        enc = Encoder(cfg, np.random.default_rng(1), "enc")
        x = Tensor(np.random.default_rng(2).random(
            (3, 1, 8, 8, 8)).astype(np.float32))
        mu, logvar = enc(x)
        assert mu.data.shape == (3, 6) and logvar.data.shape == (3, 6)

    def test_input_shape_checked(self):
        enc = Encoder(_cfg(), np.random.default_rng(1), "enc")
        with pytest.raises(ValueError):
            enc(Tensor(np.zeros((1, 1, 4, 4, 4), dtype=np.float32)))


class TestDecoders:
    def test_mask_decoder_range_and_shape(self):
        cfg = _cfg()
        stage = build_mask_stage(cfg, np.random.default_rng(3))
        z = Tensor(np.random.default_rng(4).standard_normal(
            (2, cfg.latent_dim)).astype(np.float32))
        c = np.array([[0.4], [0.8]], dtype=np.float32)
        with no_grad():
            out = stage.decoder(z, c).data
        assert out.shape == (2, 1, 8, 8, 8)
        assert out.min() > 0.0 and out.max() < 1.0  # sigmoid range, open

    def test_lesion_decoder_takes_masks(self):
        cfg = _cfg()
        stage = build_lesion_stage(cfg, np.random.default_rng(5))
        z = Tensor(np.random.default_rng(6).standard_normal(
            (2, cfg.latent_dim)).astype(np.float32))
        masks = np.zeros((2, 8, 8, 8), dtype=np.float32)
        masks[:, 2:6, 2:6, 2:6] = 1.0
        with no_grad():
            out = stage.decoder(z, masks).data
        assert out.shape == (2, 1, 8, 8, 8)
        assert 0.0 < out.min() and out.max() < 1.0

    def test_lesion_decoder_rejects_wrong_side(self):
        cfg = _cfg()
        stage = build_lesion_stage(cfg, np.random.default_rng(7))
        z = Tensor(np.zeros((1, cfg.latent_dim), dtype=np.float32))
        with pytest.raises(ValueError):
            stage.decoder(z, np.zeros((1, 4, 4, 4), dtype=np.float32))


class TestCritic:
    def test_scalar_per_sample(self):
        cfg = _cfg()
        critic = Critic(cfg, np.random.default_rng(8), "critic")
        x = Tensor(np.random.default_rng(9).random(
            (4, 1, 8, 8, 8)).astype(np.float32))
        assert critic(x).data.shape == (4, 1)

    def test_unbounded_scores(self):
        # no sigmoid at the head: scaling the input scales the response
        cfg = _cfg()
        critic = Critic(cfg, np.random.default_rng(10), "critic")
        x = np.random.default_rng(11).random((1, 1, 8, 8, 8)).astype(np.float32)
        s1 = critic(Tensor(x)).data
        s2 = critic(Tensor(x * 100.0)).data
        assert not np.allclose(s1, s2)


class TestStages:
    def test_parameter_split(self):
        stage = build_mask_stage(_cfg(), np.random.default_rng(12))
        gen = {p.id for p in stage.generator_parameters()}
        cri = {p.id for p in stage.critic_parameters()}
        assert gen and cri and not (gen & cri)
        assert gen | cri == {p.id for p in stage.parameters()}

    def test_unique_parameter_ids(self):
        stage = build_lesion_stage(_cfg(), np.random.default_rng(13))
        ids = [p.id for p in stage.parameters()]
        assert len(ids) == len(set(ids))
        assert all(i.startswith("lesion_net.") for i in ids)

    def test_build_deterministic(self):
        a = build_mask_stage(_cfg(), np.random.default_rng(14))
        b = build_mask_stage(_cfg(), np.random.default_rng(14))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert pa.id == pb.id
            assert np.array_equal(pa.value.data, pb.value.data)

    def test_roundtrip_through_full_model(self):
        # encode -> reparameterize -> decode at toy size runs and stays finite
        cfg = _cfg()
        stage = build_mask_stage(cfg, np.random.default_rng(15))
        x = Tensor(np.random.default_rng(16).random(
            (2, 1, 8, 8, 8)).astype(np.float32))
        mu, logvar = stage.encoder(x)
        s = reparameterize(mu, logvar,
                           np.random.default_rng(17).standard_normal(
                               mu.data.shape).astype(np.float32))
        c = np.array([[0.5], [0.6]], dtype=np.float32)
        out = stage.decoder(s.z, c)
        assert np.isfinite(out.data).all()
