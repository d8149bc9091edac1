import copy

import numpy as np
import pytest

from shapediff import diffusion as dm
from shapediff.sign_correction import (correct_signs, extract_features,
                                       group_assignment,
                                       init_feature_extractor)


@pytest.fixture(scope="module")
def schedule():
    return dm.make_schedule(1000)


class TestSchedule:
    def test_linear_betas(self, schedule):
        assert schedule.T == 1000
        assert schedule.beta[0] == pytest.approx(1e-4)
        assert schedule.beta[-1] == pytest.approx(0.02)
        assert np.allclose(np.diff(schedule.beta), np.diff(schedule.beta)[0])

    def test_alpha_bar_monotone(self, schedule):
        assert (np.diff(schedule.alpha_bar) < 0).all()
        assert schedule.alpha_bar[-1] < 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            dm.make_schedule(0)
        with pytest.raises(ValueError):
            dm.make_schedule(10, beta_start=0.5, beta_end=0.1)


class TestForwardProcess:
    def test_t1_nearly_clean(self, schedule):
        x0 = np.ones((4, 4))
        out = dm.forward_noise(x0, 1, np.zeros((4, 4)), schedule)
        assert np.allclose(out, np.sqrt(1 - 1e-4) * x0)

    def test_moments(self, schedule):
        # terminal distribution of a zero signal is the noise itself
        rng = np.random.default_rng(0)
        draws = 10_000
        t = 600
        var_expected = 1.0 - schedule.alpha_bar[t - 1]
        samples = np.empty(draws)
        for i in range(draws):
            samples[i] = dm.forward_noise(
                np.zeros((2, 2)), t, rng.standard_normal((2, 2)), schedule)[0, 0]
        se_mean = np.sqrt(var_expected / draws)
        assert abs(samples.mean()) < 3 * se_mean
        se_var = var_expected * np.sqrt(2.0 / (draws - 1))
        assert abs(samples.var() - var_expected) < 3 * se_var


class TestConditioning:
    def test_shape_and_values(self, humanoid, humanoid_basis):
        params = init_feature_extractor(32, seed=0)
        sigma = extract_features(params, humanoid, humanoid_basis)
        hat, _ = correct_signs(sigma, humanoid_basis)
        y = dm.build_conditioning(sigma, humanoid_basis.area, hat)
        assert y.shape == (32, 32)
        # after correction every diagonal projection is non-negative
        assert (np.diag(y) >= 0).all()

    def test_flip_invariance(self, humanoid, humanoid_basis):
        params = init_feature_extractor(32, seed=0)
        rng = np.random.default_rng(1)
        sigma = extract_features(params, humanoid, humanoid_basis)
        hat, _ = correct_signs(sigma, humanoid_basis)
        y_ref = dm.build_conditioning(sigma, humanoid_basis.area, hat)
        s = rng.choice([-1.0, 1.0], 32)
        flipped = humanoid_basis.with_signs(s)
        sigma_f = extract_features(params, humanoid, flipped)
        hat_f, _ = correct_signs(sigma_f, flipped)
        y_f = dm.build_conditioning(sigma_f, flipped.area, hat_f)
        assert np.array_equal(y_ref, y_f)


class TestDenoiser:
    def test_untrained_loss_near_one(self, schedule):
        rng = np.random.default_rng(0)
        params = dm.init_denoiser(32, seed=0)
        x0 = rng.standard_normal((8, 32, 32))
        y = rng.standard_normal((8, 32, 32))
        losses = [dm.ddpm_loss_and_grads(params, x0, y, schedule,
                                         np.random.default_rng(k))[0]
                  for k in range(10)]
        assert 0.8 < np.mean(losses) < 1.2

    def test_gradient_matches_finite_differences(self):
        micro = dm.init_denoiser(8, widths=(2, 2, 2), temb_dim=8, seed=1)
        sch = dm.make_schedule(10)
        x0 = np.random.default_rng(3).standard_normal((2, 8, 8))
        y = np.random.default_rng(4).standard_normal((2, 8, 8))

        def loss_of(p):
            return dm.ddpm_loss_and_grads(p, x0, y, sch,
                                          np.random.default_rng(7))[0]

        _, grads = dm.ddpm_loss_and_grads(micro, x0, y, sch,
                                          np.random.default_rng(7))
        rng = np.random.default_rng(9)
        for key in sorted(micro.weights):
            W = micro.weights[key]
            for _ in range(2):
                idx = tuple(rng.integers(s) for s in W.shape)
                eps = 1e-6
                plus = copy.deepcopy(micro)
                plus.weights[key][idx] += eps
                minus = copy.deepcopy(micro)
                minus.weights[key][idx] -= eps
                fd = (loss_of(plus) - loss_of(minus)) / (2 * eps)
                an = grads[key][idx]
                assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-8), key

    def test_resolution_divisible_by_four(self):
        with pytest.raises(ValueError):
            dm.init_denoiser(30)


class TestTraining:
    def test_smoke_run_and_trace(self, schedule):
        rng = np.random.default_rng(0)
        data = [(rng.standard_normal((32, 32)), rng.standard_normal((32, 32)))
                for _ in range(4)]
        params = dm.init_denoiser(32, seed=0)
        trained, trace = dm.train_ddpm(params, data, schedule, epochs=2,
                                       batch=2, seed=0, lr=1e-4)
        assert len(trace) == 4  # two batches per epoch
        assert np.isfinite(trace).all()

    def test_deterministic(self, schedule):
        rng = np.random.default_rng(0)
        data = [(rng.standard_normal((32, 32)), rng.standard_normal((32, 32)))]
        out = []
        for _ in range(2):
            params = dm.init_denoiser(32, seed=0)
            trained, trace = dm.train_ddpm(params, data, schedule, epochs=2,
                                           batch=1, seed=5, lr=1e-4)
            out.append((trained, trace))
        assert np.array_equal(out[0][1], out[1][1])
        for key in out[0][0].weights:
            assert np.array_equal(out[0][0].weights[key], out[1][0].weights[key])

    def test_normalize_sets_scales_and_sample_inverts(self, schedule, tmp_path):
        rng = np.random.default_rng(0)
        scale = 0.05
        data = [(rng.standard_normal((32, 32)) * scale,
                 rng.standard_normal((32, 32)) * scale) for _ in range(4)]
        params = dm.init_denoiser(32, seed=0)
        trained, _ = dm.train_ddpm(params, data, schedule, epochs=1, batch=2,
                                   seed=0, lr=1e-4, normalize=True)
        Cs = np.asarray([c for c, _ in data])
        Ys = np.asarray([y for _, y in data])
        assert trained.x_scale == pytest.approx(1.0 / Cs.std())
        assert trained.y_scale == pytest.approx(1.0 / Ys.std())

        # the scales survive a checkpoint roundtrip and sample() applies
        # them: samples come back in the small data scale, not unit scale
        path = tmp_path / "n.ckpt"
        dm.save_checkpoint(path, trained, schedule)
        again, _ = dm.load_checkpoint(path)
        assert again.x_scale == trained.x_scale
        assert again.y_scale == trained.y_scale
        sch = dm.make_schedule(10)
        raw = dm.sample(trained, data[0][1], sch, seed=7)
        trained_unit = trained.copy()
        trained_unit.x_scale = 1.0
        unit = dm.sample(trained_unit, data[0][1], sch, seed=7)
        assert np.allclose(raw * trained.x_scale, unit)


class TestConditioningSensitivity:
    def test_two_cluster_separation(self):
        # after training on two distinct (C, y) clusters, samples
        # conditioned on y1 must land nearer cluster 1 in >= 90% of 50 draws
        rng = np.random.default_rng(0)
        n = 8
        C1, C2 = rng.standard_normal((2, n, n))
        y1, y2 = rng.standard_normal((2, n, n))
        data = [(C1, y1), (C2, y2)] * 8
        sch = dm.make_schedule(100, 1e-4, 0.05)
        params = dm.init_denoiser(n, widths=(8, 8, 8), temb_dim=16, seed=0)
        params, _ = dm.train_ddpm(params, data, sch, epochs=400, batch=4,
                                  seed=1, lr=2e-3, final_lr=1e-4)
        draws = dm.sample(params, y1, sch, seed=5, count=50)
        d1 = np.linalg.norm(draws - C1, axis=(1, 2))
        d2 = np.linalg.norm(draws - C2, axis=(1, 2))
        assert (d1 < d2).mean() >= 0.9


class TestSampler:
    def test_deterministic_and_counted(self):
        params = dm.init_denoiser(8, widths=(4, 4, 4), temb_dim=8, seed=0)
        sch = dm.make_schedule(20)
        y = np.random.default_rng(1).standard_normal((8, 8))
        before = dm.SAMPLER_STATS["chains"]
        a = dm.sample(params, y, sch, seed=3)
        b = dm.sample(params, y, sch, seed=3)
        assert np.array_equal(a, b)
        assert a.shape == (8, 8)
        assert dm.SAMPLER_STATS["chains"] == before + 2

    def test_batched_count(self):
        params = dm.init_denoiser(8, widths=(4, 4, 4), temb_dim=8, seed=0)
        sch = dm.make_schedule(20)
        y = np.random.default_rng(1).standard_normal((8, 8))
        before = dm.SAMPLER_STATS["chains"]
        out = dm.sample(params, y, sch, seed=3, count=5)
        assert out.shape == (5, 8, 8)
        assert dm.SAMPLER_STATS["chains"] == before + 5


class TestIO:
    def test_checkpoint_roundtrip(self, tmp_path, schedule):
        params = dm.init_denoiser(32, seed=2)
        path = tmp_path / "d.ckpt"
        dm.save_checkpoint(path, params, schedule)
        again, sch = dm.load_checkpoint(path)
        assert again.n == 32
        assert sch.T == schedule.T
        assert np.array_equal(sch.beta, schedule.beta)
        for key, value in params.weights.items():
            assert np.array_equal(again.weights[key], value)

    def test_checkpoint_deterministic_bytes(self, tmp_path, schedule):
        params = dm.init_denoiser(32, seed=2)
        dm.save_checkpoint(tmp_path / "a.ckpt", params, schedule)
        dm.save_checkpoint(tmp_path / "b.ckpt", params, schedule)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_shard_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        records = [(rng.standard_normal((16, 16)), rng.standard_normal((16, 16)))
                   for _ in range(3)]
        dm.write_shard(tmp_path / "s.bin", records)
        again = dm.read_shard(tmp_path / "s.bin")
        assert len(again) == 3
        for (c0, y0), (c1, y1) in zip(records, again):
            assert np.array_equal(c0, c1)
            assert np.array_equal(y0, y1)
