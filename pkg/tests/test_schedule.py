import numpy as np
import pytest

from latentlab import (
    Field,
    NoiseSchedule,
    TimestepPlan,
    ValidationError,
    forward_noise,
    make_plan,
    make_schedule,
)


class TestMakeSchedule:
    def test_constant_alpha_bar(self):
        s = make_schedule("constant", 3, 0.5, 0.5)
        np.testing.assert_array_equal(s.alpha_bar, [0.5, 0.25, 0.125])

    def test_linear_two_steps(self):
        s = make_schedule("linear", 2, 0.1, 0.3)
        np.testing.assert_allclose(s.beta, [0.1, 0.3], rtol=1e-15)
        np.testing.assert_allclose(s.alpha_bar, [0.9, 0.9 * 0.7], rtol=1e-15)

    def test_scaled_linear_interpolates_sqrt_beta(self):
        s = make_schedule("scaled_linear", 3, 0.01, 0.09)
        np.testing.assert_allclose(np.sqrt(s.beta), [0.1, 0.2, 0.3], rtol=1e-12)

    @pytest.mark.parametrize("kind", ["constant", "linear", "scaled_linear"])
    def test_alpha_bar_strictly_decreasing(self, kind):
        s = make_schedule(kind, 100, 1e-4, 0.02)
        assert np.all(np.diff(s.alpha_bar) < 0)

    def test_posterior_variance_bounds(self):
        s = make_schedule("linear", 50, 1e-3, 0.05)
        assert s.posterior_var[0] == 0.0
        assert np.all(s.posterior_var[1:] > 0)
        assert np.all(s.posterior_var[1:] <= s.beta[1:])

    @pytest.mark.parametrize(
        "args",
        [
            ("linear", 1, 0.1, 0.2),        # T too small
            ("linear", 10, 0.0, 0.2),       # beta_start not positive
            ("linear", 10, 0.3, 0.2),       # start > end
            ("linear", 10, 0.3, 1.0),       # end not < 1
            ("bogus", 10, 0.1, 0.2),        # unknown kind
        ],
    )
    def test_validation(self, args):
        with pytest.raises(ValidationError):
            make_schedule(*args)

    def test_from_betas(self):
        s = NoiseSchedule.from_betas([0.36, 0.609375])
        np.testing.assert_allclose(s.alpha_bar, [0.64, 0.25], rtol=1e-12)

    def test_alpha_bar_at_clean_endpoint(self):
        s = make_schedule("constant", 5, 0.1, 0.1)
        assert s.alpha_bar_at(-1) == 1.0
        assert s.alpha_bar_at(2) == s.alpha_bar[2]


class TestPlan:
    def test_fifty_steps_from_999(self):
        p = make_plan(1000, 50, 999)
        assert len(p) == 50
        assert p.timesteps[0] == 999
        assert p.timesteps[1] == 979
        assert p.timesteps[-1] == 19

    def test_fifty_steps_from_981(self):
        p = make_plan(1000, 50, 981)
        assert p.timesteps[0] == 981 and p.timesteps[-1] == 1

    def test_strictly_decreasing_enforced(self):
        with pytest.raises(ValidationError):
            TimestepPlan((5, 5, 1))
        with pytest.raises(ValidationError):
            TimestepPlan((5, 7))
        with pytest.raises(ValidationError):
            TimestepPlan((5, -1))

    def test_underflow_rejected(self):
        with pytest.raises(ValidationError):
            make_plan(1000, 50, 30)

    def test_start_checked_against_schedule(self, sched):
        plan = TimestepPlan((1200, 100))
        with pytest.raises(ValidationError):
            plan.validate_against(sched)


class TestForwardNoise:
    def test_near_zero_noise_schedule_is_identity(self, rng):
        s = make_schedule("constant", 4, 1e-15, 1e-15)
        x0 = Field(rng.standard_normal((1, 3, 3)))
        noise = Field(rng.standard_normal((1, 3, 3)))
        out = forward_noise(x0, 3, noise, s)
        np.testing.assert_allclose(out.data, x0.data, atol=1e-6)

    def test_zero_noise_scales_by_sqrt_alpha_bar(self, rng, sched):
        x0 = Field(rng.standard_normal((1, 3, 3)))
        out = forward_noise(x0, 500, Field.zeros(1, 3, 3), sched)
        np.testing.assert_allclose(
            out.data, np.sqrt(sched.alpha_bar[500]) * x0.data, rtol=1e-15
        )

    def test_scalar_case(self):
        # alpha_bar_1 = 0.25 under constant beta = 0.5
        s = make_schedule("constant", 2, 0.5, 0.5)
        out = forward_noise(Field.full(1, 2, 2, 1.0), 1, Field.full(1, 2, 2, 1.0), s)
        np.testing.assert_allclose(out.data, 0.5 + np.sqrt(0.75), rtol=1e-15)

    def test_timestep_range_checked(self, rng, sched):
        x = Field(rng.standard_normal((1, 2, 2)))
        with pytest.raises(ValidationError):
            forward_noise(x, 1000, x, sched)

    def test_unit_marginal_variance(self, sched):
        # standard-normal signal and noise keep unit variance at every level;
        # 1e4 draws put the sampling noise well inside the 2% window
        g = np.random.Generator(np.random.Philox(7))
        for t in (0, 250, 999):
            x0 = Field(g.standard_normal((1, 200, 200)))
            noise = Field(g.standard_normal((1, 200, 200)))
            out = forward_noise(x0, t, noise, sched)
            assert abs(out.data.var() - 1.0) < 0.02
