import numpy as np
import pytest

from latentlab import (
    Codec,
    Field,
    GaussianPrior,
    InitStrategy,
    Measurement,
    MixtureScoreModel,
    NoiseSchedule,
    ValidationError,
    ddim_step,
    ddpm_step,
    epsilon,
    forward_noise,
    initialize,
    make_rng,
    make_schedule,
    tweedie,
)

from conftest import rand_field


class _ZeroEpsModel:
    """Stub predictor: always returns zero noise."""

    def __init__(self, shape):
        self.shape = shape

    def epsilon(self, z, t, c, sched):
        return Field(np.zeros(self.shape))


class TestTweedie:
    def test_near_one_alpha_bar_is_identity(self, rng):
        s = make_schedule("constant", 3, 1e-15, 1e-15)
        z = rand_field(rng)
        eps = rand_field(rng)
        out = tweedie(z, eps, 2, s)
        np.testing.assert_allclose(out.data, z.data, atol=1e-6)

    def test_zero_eps_is_pure_rescale(self, rng, sched):
        z = rand_field(rng)
        out = tweedie(z, Field.zeros(1, 4, 4), 600, sched)
        np.testing.assert_allclose(out.data, z.data / np.sqrt(sched.alpha_bar[600]), rtol=1e-15)

    def test_exact_eps_gives_conditional_mean(self, rng, sched, unit_model):
        # N(0,I) prior: E[z0|z_t] = sqrt(ab) z_t
        z = rand_field(rng)
        t = 420
        eps = epsilon(unit_model, z, t, None, sched)
        out = tweedie(z, eps, t, sched)
        np.testing.assert_allclose(out.data, np.sqrt(sched.alpha_bar[t]) * z.data, rtol=1e-10)

    def test_inverts_forward_noise_exactly(self, rng, sched):
        x0 = rand_field(rng)
        noise = rand_field(rng)
        for t in (0, 123, 999):
            z = forward_noise(x0, t, noise, sched)
            back = tweedie(z, noise, t, sched)
            np.testing.assert_allclose(back.data, x0.data, atol=1e-12)


class TestDDIM:
    def test_equal_alpha_bar_is_identity(self, rng):
        s = make_schedule("constant", 4, 1e-15, 1e-15)
        z = rand_field(rng)
        eps = rand_field(rng)
        out = ddim_step(z, eps, 3, 2, s)
        np.testing.assert_allclose(out.data, z.data, atol=1e-6)

    def test_terminal_step_returns_tweedie(self, rng, sched):
        z, eps = rand_field(rng), rand_field(rng)
        out = ddim_step(z, eps, 700, -1, sched)
        np.testing.assert_array_equal(out.data, tweedie(z, eps, 700, sched).data)

    def test_scalar_substitution(self):
        # alpha_bar: 0.64 at t=0, 0.25 at t=1; exact N(0,I) eps at z=1
        s = NoiseSchedule.from_betas([0.36, 0.609375])
        z = Field.full(1, 2, 2, 1.0)
        eps = Field(np.sqrt(1 - s.alpha_bar[1]) * z.data)
        out = ddim_step(z, eps, 1, 0, s)
        expect = 0.8 * 0.5 + 0.6 * np.sqrt(0.75)
        np.testing.assert_allclose(out.data, expect, rtol=1e-9)

    def test_ordering_enforced(self, rng, sched):
        z, eps = rand_field(rng), rand_field(rng)
        with pytest.raises(ValidationError):
            ddim_step(z, eps, 100, 100, sched)


class TestDDPM:
    def test_zero_eps_zero_noise_rescale(self, rng, sched):
        z = rand_field(rng)
        zero = Field.zeros(1, 4, 4)
        out = ddpm_step(z, zero, 500, sched, zero)
        np.testing.assert_allclose(out.data, z.data / np.sqrt(sched.alpha[500]), rtol=1e-15)

    def test_scalar_hand_computation(self):
        s = make_schedule("constant", 2, 0.04, 0.04)
        z = Field(np.full((1, 1, 1), 0.7))
        eps = Field(np.full((1, 1, 1), 0.3))
        noise = Field(np.full((1, 1, 1), 0.5))
        out = ddpm_step(z, eps, 1, s, noise)
        ab1 = 0.96 * 0.96
        btilde = (1 - 0.96) / (1 - ab1) * 0.04
        expect = (0.7 - 0.04 / np.sqrt(1 - ab1) * 0.3) / np.sqrt(0.96) + np.sqrt(btilde) * 0.5
        np.testing.assert_allclose(out.data, expect, rtol=1e-12)

    def test_t_zero_is_deterministic(self, rng, sched):
        z, eps = rand_field(rng), rand_field(rng)
        a = ddpm_step(z, eps, 0, sched, rand_field(rng))
        b = ddpm_step(z, eps, 0, sched, rand_field(rng))
        np.testing.assert_array_equal(a.data, b.data)

    def test_one_step_variance_matches_analytic(self, sched, unit_model):
        # z ~ N(0,I) with exact eps: z' = sqrt(alpha) z + sqrt(btilde) xi
        g = make_rng(5)
        t = 999
        n = 10_000
        zs = g.standard_normal((n, 16))
        xis = g.standard_normal((n, 16))
        outs = np.empty_like(zs)
        for i in range(n):
            z = Field(zs[i].reshape(1, 4, 4))
            eps = epsilon(unit_model, z, t, None, sched)
            out = ddpm_step(z, eps, t, sched, Field(xis[i].reshape(1, 4, 4)))
            outs[i] = out.data.reshape(-1)
        analytic = sched.alpha[t] + sched.posterior_var[t]
        assert abs(outs.var() / analytic - 1.0) < 0.02


class TestInitialize:
    def test_pure_statistics(self, sched, unit_model):
        g = make_rng(11)
        draws = np.stack(
            [initialize(InitStrategy("pure"), unit_model, None, sched, g).data
             for _ in range(10_000)]
        )
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 1.0) < 0.02

    def test_offset_scale_zero_matches_pure_stream(self, sched, unit_model):
        a = initialize(InitStrategy("pure"), unit_model, None, sched, make_rng(3))
        b = initialize(InitStrategy("offset_noise", offset_scale=0.0), unit_model, None, sched, make_rng(3))
        np.testing.assert_array_equal(a.data, b.data)

    def test_offset_noise_shifts_channels_jointly(self, sched):
        model = MixtureScoreModel([GaussianPrior(Field.zeros(2, 3, 3), 1.0)])
        base = initialize(InitStrategy("pure"), model, None, sched, make_rng(3))
        shifted = initialize(InitStrategy("offset_noise", offset_scale=0.5), model, None, sched, make_rng(3))
        delta = shifted.data - base.data
        for ch in range(2):
            np.testing.assert_allclose(delta[ch], delta[ch, 0, 0], rtol=0, atol=1e-12)

    def test_prior_ddim_with_zero_eps_stub_is_rescale(self, sched):
        stub = _ZeroEpsModel((1, 4, 4))
        g = make_rng(9)
        out = initialize(InitStrategy("prior_ddim"), stub, None, sched, g)
        base = make_rng(9).standard_normal((1, 4, 4))
        ratio = np.sqrt(sched.alpha_bar[998] / sched.alpha_bar[999])
        np.testing.assert_allclose(out.data, base * ratio, rtol=1e-12)

    def test_prior_ddpm_deterministic_per_seed(self, sched, unit_model):
        a = initialize(InitStrategy("prior_ddpm"), unit_model, None, sched, make_rng(4))
        b = initialize(InitStrategy("prior_ddpm"), unit_model, None, sched, make_rng(4))
        np.testing.assert_array_equal(a.data, b.data)

    def test_unmasked_requires_measurement(self, sched, unit_model):
        with pytest.raises(ValidationError):
            initialize(InitStrategy("unmasked"), unit_model, None, sched, make_rng(0))

    def test_unmasked_uses_noised_observation(self, sched, unit_model, identity_codec):
        mask = np.zeros((1, 4, 4))
        mask[0, :2] = 1.0
        x_true = Field(np.full((1, 4, 4), 0.8))
        m = Measurement.from_truth(x_true, Field(mask), identity_codec)
        seed = 21
        out = initialize(InitStrategy("unmasked"), unit_model, m, sched, make_rng(seed))
        g = make_rng(seed)
        base = g.standard_normal((1, 4, 4))
        xi = g.standard_normal((1, 4, 4))
        ab = sched.alpha_bar[999]
        expect = np.where(
            mask == 1.0, np.sqrt(ab) * m.y_bar.data + np.sqrt(1 - ab) * xi, base
        )
        np.testing.assert_array_equal(out.data, expect)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            InitStrategy("bogus")
