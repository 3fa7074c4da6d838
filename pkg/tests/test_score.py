import numpy as np
import pytest

from latentlab import (
    Field,
    GaussianPrior,
    GuidanceSpec,
    MixtureScoreModel,
    ValidationError,
    epsilon,
    epsilon_cfg,
    log_marginal_density,
    rbf_covariance,
)

from conftest import rand_field


def numeric_score(model, z, t, c, sched, h=1e-5):
    """Central-difference gradient of log p_t, the independent score oracle."""
    base = z.data.reshape(-1).copy()
    grad = np.zeros_like(base)
    for i in range(base.size):
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        f_up = log_marginal_density(model, Field(up.reshape(z.shape)), t, c, sched)
        f_dn = log_marginal_density(model, Field(dn.reshape(z.shape)), t, c, sched)
        grad[i] = (f_up - f_dn) / (2 * h)
    return grad.reshape(z.shape)


class TestEpsilon:
    def test_standard_normal_prior_closed_form(self, rng, sched, unit_model):
        # marginal of N(0, I) stays N(0, I); eps = sqrt(1-ab) z
        z = rand_field(rng)
        for t in (10, 500, 999):
            eps = epsilon(unit_model, z, t, "x", sched)
            expect = np.sqrt(1 - sched.alpha_bar[t]) * z.data
            np.testing.assert_allclose(eps.data, expect, rtol=1e-12)

    def test_single_component_label_equals_null(self, rng, sched, unit_model):
        z = rand_field(rng)
        a = epsilon(unit_model, z, 300, "x", sched)
        b = epsilon(unit_model, z, 300, None, sched)
        np.testing.assert_allclose(a.data, b.data, rtol=1e-12)

    def test_symmetric_mixture_zero_at_midpoint(self, sched):
        mu = Field.full(1, 2, 2, 0.7)
        model = MixtureScoreModel(
            [GaussianPrior(mu, 0.5), GaussianPrior(-mu, 0.5)],
            weights=[0.5, 0.5],
            labels=["p", "m"],
        )
        z0 = Field.zeros(1, 2, 2)
        eps = epsilon(model, z0, 400, None, sched)
        np.testing.assert_allclose(eps.data, 0.0, atol=1e-12)

    def test_unknown_label_rejected(self, rng, sched, unit_model):
        with pytest.raises(ValidationError):
            epsilon(unit_model, rand_field(rng), 10, "bogus", sched)

    def test_dense_matches_diagonal_special_case(self, rng, sched):
        mean = rand_field(rng)
        var = 0.7
        diag_model = MixtureScoreModel([GaussianPrior(mean, var)])
        dense_model = MixtureScoreModel([GaussianPrior(mean, var * np.eye(16))])
        z = rand_field(rng)
        a = epsilon(diag_model, z, 123, None, sched)
        b = epsilon(dense_model, z, 123, None, sched)
        np.testing.assert_allclose(a.data, b.data, rtol=1e-9)

    @pytest.mark.parametrize("t", [50, 500, 950])
    def test_matches_numeric_score(self, rng, sched, t):
        # eps / (-sqrt(1-ab)) must equal the numerical gradient of log p_t
        mean1 = rand_field(rng)
        mean2 = rand_field(rng)
        configs = [
            (MixtureScoreModel([GaussianPrior(mean1, 0.8)]), None),
            (MixtureScoreModel([GaussianPrior(mean1, rbf_covariance((1, 4, 4), 1.5, 0.4))]), None),
            (
                MixtureScoreModel(
                    [GaussianPrior(mean1, 0.5), GaussianPrior(mean2, 1.2)],
                    weights=[0.3, 0.7],
                    labels=["a", "b"],
                ),
                None,
            ),
            (
                MixtureScoreModel(
                    [GaussianPrior(mean1, 0.5), GaussianPrior(mean2, 1.2)],
                    weights=[0.3, 0.7],
                    labels=["a", "b"],
                ),
                "b",
            ),
        ]
        z = rand_field(rng)
        for model, c in configs:
            eps = epsilon(model, z, t, c, sched)
            score = eps.data / (-np.sqrt(1 - sched.alpha_bar[t]))
            num = numeric_score(model, z, t, c, sched)
            denom = np.maximum(np.abs(num.data), 1e-3)
            assert np.max(np.abs(score - num.data) / denom) < 1e-4


class TestCFG:
    def test_scale_one_returns_conditional_exactly(self, rng, sched):
        m1, m2 = rand_field(rng), rand_field(rng)
        model = MixtureScoreModel(
            [GaussianPrior(m1, 0.5), GaussianPrior(m2, 1.0)],
            weights=[0.4, 0.6],
            labels=["a", "b"],
        )
        z = rand_field(rng)
        out = epsilon_cfg(model, z, 200, "a", GuidanceSpec(1.0), sched)
        np.testing.assert_array_equal(out.data, epsilon(model, z, 200, "a", sched).data)

    def test_scale_zero_returns_null(self, rng, sched):
        m1, m2 = rand_field(rng), rand_field(rng)
        model = MixtureScoreModel(
            [GaussianPrior(m1, 0.5), GaussianPrior(m2, 1.0)],
            weights=[0.4, 0.6],
            labels=["a", "b"],
        )
        z = rand_field(rng)
        out = epsilon_cfg(model, z, 200, "a", GuidanceSpec(0.0), sched)
        np.testing.assert_array_equal(out.data, epsilon(model, z, 200, None, sched).data)

    def test_guidance_inert_when_conditional_equals_null(self, rng, sched, unit_model):
        # one-component model: eps_c == eps_null, so any scale collapses
        z = rand_field(rng)
        out = epsilon_cfg(unit_model, z, 700, "x", GuidanceSpec(2.0), sched)
        expect = np.sqrt(1 - sched.alpha_bar[700]) * z.data
        np.testing.assert_allclose(out.data, expect, rtol=1e-10)

    def test_extrapolation_formula(self, rng, sched):
        m1, m2 = rand_field(rng), rand_field(rng)
        model = MixtureScoreModel(
            [GaussianPrior(m1, 0.5), GaussianPrior(m2, 1.0)],
            weights=[0.4, 0.6],
            labels=["a", "b"],
        )
        z = rand_field(rng)
        s = 3.5
        out = epsilon_cfg(model, z, 200, "a", GuidanceSpec(s), sched)
        e_c = epsilon(model, z, 200, "a", sched).data
        e_n = epsilon(model, z, 200, None, sched).data
        np.testing.assert_allclose(out.data, e_n + s * (e_c - e_n), rtol=1e-12)

    def test_negative_scale_rejected(self):
        with pytest.raises(ValidationError):
            GuidanceSpec(-0.5)


class TestModelValidation:
    def test_weights_must_sum_to_one(self, rng):
        p = GaussianPrior(rand_field(rng), 1.0)
        with pytest.raises(ValidationError):
            MixtureScoreModel([p, p], weights=[0.5, 0.6])

    def test_variance_positive(self, rng):
        with pytest.raises(ValidationError):
            GaussianPrior(rand_field(rng), -1.0)
        with pytest.raises(ValidationError):
            GaussianPrior(rand_field(rng), np.zeros((1, 4, 4)))

    def test_dense_cap(self):
        mean = Field.zeros(1, 17, 17)  # 289 > 256
        with pytest.raises(ValidationError):
            GaussianPrior(mean, np.eye(289))

    def test_dense_must_be_spd(self, rng):
        mean = rand_field(rng, 1, 2, 2)
        bad = -np.eye(4)
        with pytest.raises(ValidationError):
            GaussianPrior(mean, bad)
        asym = np.eye(4)
        asym[0, 1] = 0.5
        with pytest.raises(ValidationError):
            GaussianPrior(mean, asym)

    def test_sample_statistics(self, rng):
        cov = rbf_covariance((1, 3, 3), 1.0, 0.5)
        prior = GaussianPrior(Field.full(1, 3, 3, 2.0), cov)
        model = MixtureScoreModel([prior])
        draws = np.stack([model.sample(rng).data for _ in range(4000)])
        np.testing.assert_allclose(draws.mean(axis=0), 2.0, atol=0.1)
        flat = draws.reshape(len(draws), -1)
        emp_cov = np.cov(flat.T)
        assert np.max(np.abs(emp_cov - cov)) < 0.08
