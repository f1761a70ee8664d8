import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebst import ebm as en
from ebst import nn
from ebst.errors import ConfigError

logit_vectors = st.lists(st.floats(-50, 50), min_size=2, max_size=6).map(np.array)


class TestEnergy:
    def test_symmetric_zero(self):
        assert en.energy([0.0, 0.0]) == pytest.approx(-math.log(2.0), abs=1e-12)

    def test_direct_value(self):
        expected = -math.log(math.e + math.e ** 2 + 1.0)
        assert en.energy([1.0, 2.0, 0.0]) == pytest.approx(expected, abs=1e-12)

    def test_large_logits_no_overflow(self):
        assert en.energy([100.0, 100.0]) == pytest.approx(-100.0 - math.log(2.0), abs=1e-10)

    @given(logit_vectors, st.floats(-20, 20))
    def test_shift_law(self, z, c):
        assert en.energy(z + c) == pytest.approx(en.energy(z) - c, abs=1e-10)

    def test_batch_axis(self):
        z = np.array([[0.0, 0.0], [100.0, 100.0]])
        out = en.energy(z, axis=1)
        assert out.shape == (2,)
        assert out[0] == pytest.approx(-math.log(2.0))


class TestEnergyGrad:
    def test_symmetry(self):
        assert np.allclose(en.energy_grad_logits([0.0, 0.0]), [-0.5, -0.5], atol=1e-15)

    def test_direct_value(self):
        out = en.energy_grad_logits([0.0, math.log(2.0), math.log(3.0)])
        assert np.allclose(out, [-1 / 6, -2 / 6, -3 / 6], atol=1e-12)

    @given(logit_vectors)
    def test_sums_to_minus_one_and_negative(self, z):
        g = en.energy_grad_logits(z)
        assert g.sum() == pytest.approx(-1.0, abs=1e-9)
        assert np.all(g < 0) and np.all(g >= -1.0)

    def test_matches_finite_difference(self):
        # sigma 1 keeps every softmax component large enough for the FD budget
        rng = np.random.default_rng(3)
        z = rng.normal(0, 1, size=5)
        g = en.energy_grad_logits(z)
        h = 1e-6
        for i in range(5):
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            fd = (en.energy(zp) - en.energy(zm)) / (2 * h)
            assert abs(fd - g[i]) / max(abs(fd), abs(g[i])) < 1e-6


class TestRebmTargetTerm:
    def test_alpha_zero(self):
        assert en.rebm_target_term([-5.0, 3.0], 0.0) == 0.0

    def test_identity_weight(self):
        assert en.rebm_target_term([-0.693147], 1.0) == pytest.approx(-0.693147)

    def test_weighted_sum(self):
        out = en.rebm_target_term([-2.407606, -0.693147], 0.8)
        assert out == pytest.approx(-2.480602, abs=1e-6)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ConfigError):
            en.rebm_target_term([0.0], -0.1)


class TestEbmLoss:
    def test_one_hot(self):
        out = en.ebm_loss([1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.5, 0.5])
        assert out == pytest.approx(-2.0 + math.log(0.5), abs=1e-12)

    def test_soft_label(self):
        expected = -math.log(0.3 * math.e + 0.6 * math.e ** 2 + 0.1) + math.log(0.5)
        out = en.ebm_loss([1.0, 2.0, 0.0], [0.3, 0.6, 0.1], [0.5, 0.5, 0.5])
        assert out == pytest.approx(expected, abs=1e-12)
        assert out == pytest.approx(-2.370042, abs=1e-6)

    def test_uniform_zero_case(self):
        out = en.ebm_loss([0.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3], [1.0, 1.0, 1.0])
        assert out == pytest.approx(0.0, abs=1e-15)

    @given(st.integers(0, 4), logit_vectors.filter(lambda z: len(z) == 5),
           st.floats(0.01, 1.0))
    def test_one_hot_identity_exact(self, k, z, lam):
        y = np.zeros(5)
        y[k] = 1.0
        lambdas = np.full(5, lam)
        assert en.ebm_loss(z, y, lambdas) == -z[k] + math.log(lam)

    def test_stable_under_extreme_logits(self):
        out = en.ebm_loss([800.0, -800.0], [0.5, 0.5], [0.9, 0.9])
        assert np.isfinite(out)

    def test_grad_is_negative_weighted_softmax(self):
        z = np.array([1.0, 2.0, 0.0])
        y = np.array([0.3, 0.6, 0.1])
        g = en.ebm_loss_grad_logits(z, y)
        w = y * np.exp(z)
        assert np.allclose(g, -w / w.sum(), atol=1e-12)


class TestAnnealing:
    def test_exact_schedule(self):
        expected = [10.0, 5.0, 2.0, 1.0, 10.0 / 17.0, 10.0 / 26.0, 0.0]
        got = [en.anneal_beta(n) for n in range(7)]
        assert np.allclose(got, expected, atol=1e-15)

    def test_nonincreasing_and_reaches_zero(self):
        betas = [en.anneal_beta(n) for n in range(12)]
        assert all(a >= b for a, b in zip(betas, betas[1:]))
        assert betas[6] == 0.0

    def test_rejects_negative(self):
        with pytest.raises(ConfigError):
            en.anneal_beta(-1)

    def test_blend_beta_zero(self):
        assert en.annealed_target_loss(-2.5, 17.0, 0.0) == -2.5

    def test_blend_equal_inputs_fixed_point(self):
        assert en.annealed_target_loss(-1.3, -1.3, 1e6) == pytest.approx(-1.3, abs=1e-12)

    def test_blend_direct_value(self):
        out = en.annealed_target_loss(-2.370187, -0.693147, 1.0)
        assert out == pytest.approx(-1.531667, abs=1e-6)


class TestSgld:
    def test_zero_steps_returns_start(self, tiny_params):
        rng = np.random.default_rng(0)
        out = en.sgld_negative_sample(tiny_params, [1.0, 2.0], 0, 0.1, 0.01, rng)
        assert np.array_equal(out.x, [1.0, 2.0])
        assert not out.diverged

    def test_constant_energy_model_fixed_point(self):
        params = nn.ModelParams([np.zeros((2, 2))], [np.zeros(2)])
        rng = np.random.default_rng(0)
        out = en.sgld_negative_sample(params, [0.3, -0.4], 25, 0.5, 0.0, rng)
        assert np.allclose(out.x, [0.3, -0.4], atol=1e-15)

    def test_quadratic_surrogate_single_step(self, tiny_params):
        rng = np.random.default_rng(0)
        out = en.sgld_negative_sample(tiny_params, [1.0, 0.0], 1, 0.2, 0.0, rng,
                                      energy_grad=lambda x: x)
        assert np.allclose(out.x, [0.9, 0.0], atol=1e-15)

    def test_deterministic_given_seed(self, tiny_params):
        a = en.sgld_negative_sample(tiny_params, [0.1, 0.2], 30, 0.1, 0.05,
                                    np.random.default_rng(42))
        b = en.sgld_negative_sample(tiny_params, [0.1, 0.2], 30, 0.1, 0.05,
                                    np.random.default_rng(42))
        assert np.array_equal(a.x, b.x)

    def test_diverging_chain_flags_and_keeps_last_finite(self, tiny_params):
        rng = np.random.default_rng(0)
        blow_up = lambda x: x * 1e308
        with pytest.warns(RuntimeWarning):
            out = en.sgld_negative_sample(tiny_params, [1.0, 1.0], 5, 2.0, 0.0, rng,
                                          energy_grad=blow_up)
        assert out.diverged
        assert np.all(np.isfinite(out.x))

    def test_input_grad_matches_finite_difference(self, tiny_params):
        x = np.array([0.37, -0.81])
        g = en.energy_input_grad(tiny_params, x)
        h = 1e-6
        for i in range(2):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd = (en.energy(nn.mlp_forward(tiny_params, xp))
                  - en.energy(nn.mlp_forward(tiny_params, xm))) / (2 * h)
            assert fd == pytest.approx(g[i], rel=1e-5, abs=1e-9)
