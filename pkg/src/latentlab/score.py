"""Exact noise predictors for Gaussian and Gaussian-mixture data distributions.

These replace a trained denoising network: for a prior p(z0) that is Gaussian
(or a finite mixture of Gaussians), the marginal of z_t = sqrt(ab) z0 +
sqrt(1-ab) eps is available in closed form, so the ideal noise prediction

    eps(z, t) = -sqrt(1 - ab_t) * grad log p_t(z)

can be evaluated exactly. A condition label selects a single mixture
component; the null condition (None) selects the full mixture, mirroring the
null embedding of classifier-free guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ValidationError
from .field import Field
from .schedule import NoiseSchedule

__all__ = [
    "GaussianPrior",
    "MixtureScoreModel",
    "GuidanceSpec",
    "epsilon",
    "epsilon_cfg",
    "log_marginal_density",
    "rbf_covariance",
]

DENSE_ELEMENT_CAP = 256


class GaussianPrior:
    """Gaussian prior over fields: diagonal or dense covariance.

    ``variance`` may be a positive scalar, a per-element array matching the
    mean's shape (diagonal covariance), or an (n, n) matrix over flattened
    coordinates. Dense mode is capped at 256 elements so the posterior algebra
    stays instant.
    """

    def __init__(self, mean: Field, variance):
        self.mean = mean
        n = mean.data.size
        var = np.asarray(variance, dtype=np.float64)
        if var.ndim == 0:
            if var <= 0:
                raise ValidationError("variance must be positive")
            self.diag = np.full(n, float(var))
            self.cov = None
        elif var.shape == mean.shape or var.shape == (n,):
            if not np.all(var > 0):
                raise ValidationError("all variance entries must be positive")
            self.diag = var.reshape(n).copy()
            self.cov = None
        elif var.ndim == 2 and var.shape == (n, n):
            if n > DENSE_ELEMENT_CAP:
                raise ValidationError(
                    f"dense covariance limited to {DENSE_ELEMENT_CAP} elements, got {n}"
                )
            if not np.allclose(var, var.T, atol=1e-12):
                raise ValidationError("dense covariance must be symmetric")
            try:
                np.linalg.cholesky(var)
            except np.linalg.LinAlgError:
                raise ValidationError("dense covariance must be positive definite") from None
            self.diag = None
            self.cov = var.copy()
        else:
            raise ValidationError(
                f"variance shape {var.shape} incompatible with mean shape {mean.shape}"
            )

    @property
    def is_dense(self) -> bool:
        return self.cov is not None

    @property
    def size(self) -> int:
        return self.mean.data.size

    def noised_cov_solve(self, ab: float, rhs: np.ndarray) -> np.ndarray:
        """Solve (ab * Sigma + (1 - ab) I) u = rhs over flattened coordinates."""
        if self.is_dense:
            S = ab * self.cov + (1.0 - ab) * np.eye(self.size)
            return scipy.linalg.solve(S, rhs, assume_a="pos")
        return rhs / (ab * self.diag + (1.0 - ab))

    def noised_logpdf(self, ab: float, z_flat: np.ndarray) -> float:
        """log N(z; sqrt(ab) mu, ab Sigma + (1-ab) I)."""
        n = self.size
        r = z_flat - np.sqrt(ab) * self.mean.data.reshape(n)
        if self.is_dense:
            S = ab * self.cov + (1.0 - ab) * np.eye(n)
            chol = np.linalg.cholesky(S)
            w = scipy.linalg.solve_triangular(chol, r, lower=True)
            quad = float(w @ w)
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        else:
            s = ab * self.diag + (1.0 - ab)
            quad = float(np.sum(r * r / s))
            logdet = float(np.sum(np.log(s)))
        return -0.5 * (quad + logdet + n * np.log(2.0 * np.pi))

    def conditional_mean(self, z_t: Field, ab: float) -> Field:
        """Exact E[z0 | z_t] for this component under the noising model."""
        n = self.size
        mu = self.mean.data.reshape(n)
        r = z_t.data.reshape(n) - np.sqrt(ab) * mu
        u = self.noised_cov_solve(ab, r)
        if self.is_dense:
            mean = mu + np.sqrt(ab) * (self.cov @ u)
        else:
            mean = mu + np.sqrt(ab) * (self.diag * u)
        return Field(mean.reshape(z_t.shape))

    def posterior_jacobian_apply(self, ab: float, vec: np.ndarray) -> np.ndarray:
        """Apply J = sqrt(ab) Sigma (ab Sigma + (1-ab) I)^-1, the (symmetric)
        Jacobian of z_t -> E[z0 | z_t], to a flat vector."""
        u = self.noised_cov_solve(ab, vec)
        if self.is_dense:
            return np.sqrt(ab) * (self.cov @ u)
        return np.sqrt(ab) * (self.diag * u)


class MixtureScoreModel:
    """Finite Gaussian mixture with per-component condition labels.

    ``labels[k]`` selects component k when passed as the condition; the null
    condition (None) uses the whole mixture.
    """

    def __init__(self, priors, weights=None, labels=None):
        priors = list(priors)
        if not priors:
            raise ValidationError("mixture needs at least one component")
        shapes = {p.mean.shape for p in priors}
        if len(shapes) > 1:
            raise ValidationError(f"component shapes differ: {sorted(shapes)}")
        if weights is None:
            weights = [1.0 / len(priors)] * len(priors)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(priors),) or not np.all(weights > 0):
            raise ValidationError("weights must be positive, one per component")
        if not np.isclose(weights.sum(), 1.0, atol=1e-9):
            raise ValidationError(f"weights must sum to 1, got {weights.sum()}")
        if labels is None:
            labels = [f"c{k}" for k in range(len(priors))]
        if len(labels) != len(priors) or len(set(labels)) != len(labels):
            raise ValidationError("labels must be unique, one per component")
        self.priors = priors
        self.weights = weights
        self.labels = list(labels)
        self._by_label = {lab: k for k, lab in enumerate(labels)}

    @property
    def shape(self):
        return self.priors[0].mean.shape

    def component(self, c) -> GaussianPrior:
        if c not in self._by_label:
            raise ValidationError(f"unknown condition label {c!r}; know {self.labels}")
        return self.priors[self._by_label[c]]

    def _responsibilities(self, z_flat: np.ndarray, ab: float) -> np.ndarray:
        logp = np.array(
            [np.log(w) + p.noised_logpdf(ab, z_flat) for w, p in zip(self.weights, self.priors)]
        )
        logp -= logp.max()  # max-subtraction keeps exp() well away from underflow
        r = np.exp(logp)
        return r / r.sum()

    def epsilon(self, z_t: Field, t: int, c, sched: NoiseSchedule) -> Field:
        """Exact eps-prediction for the noised marginal at timestep t.

        With a condition label this is the single-component prediction
        sqrt(1-ab) S_t^-1 (z - sqrt(ab) mu); with the null condition the
        mixture score weighted by posterior responsibilities.
        """
        t = sched.check_timestep(t)
        ab = float(sched.alpha_bar[t])
        z_flat = z_t.data.reshape(-1)
        if c is not None:
            prior = self.component(c)
            r = z_flat - np.sqrt(ab) * prior.mean.data.reshape(-1)
            out = np.sqrt(1.0 - ab) * prior.noised_cov_solve(ab, r)
            return Field(out.reshape(z_t.shape))
        resp = self._responsibilities(z_flat, ab)
        out = np.zeros_like(z_flat)
        for w, prior in zip(resp, self.priors):
            r = z_flat - np.sqrt(ab) * prior.mean.data.reshape(-1)
            out += w * prior.noised_cov_solve(ab, r)
        return Field((np.sqrt(1.0 - ab) * out).reshape(z_t.shape))

    def epsilon_cfg(self, z_t: Field, t: int, c, guidance: "GuidanceSpec", sched) -> Field:
        return epsilon_cfg(self, z_t, t, c, guidance, sched)

    def posterior_mean(self, z_t: Field, t: int, c, sched: NoiseSchedule) -> Field:
        """Exact E[z0 | z_t] (equals Tweedie applied to the exact epsilon)."""
        t = sched.check_timestep(t)
        ab = float(sched.alpha_bar[t])
        if c is not None:
            return self.component(c).conditional_mean(z_t, ab)
        z_flat = z_t.data.reshape(-1)
        resp = self._responsibilities(z_flat, ab)
        out = np.zeros_like(z_flat)
        for w, prior in zip(resp, self.priors):
            out += w * prior.conditional_mean(z_t, ab).data.reshape(-1)
        return Field(out.reshape(z_t.shape))

    def posterior_mean_is_affine(self, c) -> bool:
        """True when z_t -> E[z0|z_t] is affine (single active component)."""
        return c is not None or len(self.priors) == 1

    def sample(self, rng: np.random.Generator, c=None) -> Field:
        """Draw one field from the prior (or from the labeled component)."""
        if c is None:
            k = int(rng.choice(len(self.priors), p=self.weights))
        else:
            self.component(c)
            k = self._by_label[c]
        prior = self.priors[k]
        n = prior.size
        xi = rng.standard_normal(n)
        if prior.is_dense:
            chol = np.linalg.cholesky(prior.cov)
            draw = prior.mean.data.reshape(n) + chol @ xi
        else:
            draw = prior.mean.data.reshape(n) + np.sqrt(prior.diag) * xi
        return Field(draw.reshape(self.shape))


@dataclass(frozen=True)
class GuidanceSpec:
    """Classifier-free guidance scale; 1.0 reproduces the conditional prediction."""

    cfg_scale: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.cfg_scale) or self.cfg_scale < 0:
            raise ValidationError(f"cfg_scale must be finite and >= 0, got {self.cfg_scale}")


def epsilon(model: MixtureScoreModel, z_t: Field, t: int, c, sched: NoiseSchedule) -> Field:
    return model.epsilon(z_t, t, c, sched)


def epsilon_cfg(
    model: MixtureScoreModel,
    z_t: Field,
    t: int,
    c,
    guidance: GuidanceSpec,
    sched: NoiseSchedule,
) -> Field:
    """eps_null + s * (eps_c - eps_null); s=1 and s=0 short-circuit exactly."""
    s = guidance.cfg_scale
    if s == 1.0:
        return model.epsilon(z_t, t, c, sched)
    if s == 0.0:
        return model.epsilon(z_t, t, None, sched)
    eps_null = model.epsilon(z_t, t, None, sched)
    eps_c = model.epsilon(z_t, t, c, sched)
    return eps_null + (eps_c - eps_null) * s


def log_marginal_density(
    model: MixtureScoreModel, z_t: Field, t: int, c, sched: NoiseSchedule
) -> float:
    """log p_t(z_t) of the noised marginal (selected component or mixture)."""
    t = sched.check_timestep(t)
    ab = float(sched.alpha_bar[t])
    z_flat = z_t.data.reshape(-1)
    if c is not None:
        return model.component(c).noised_logpdf(ab, z_flat)
    logs = np.array(
        [np.log(w) + p.noised_logpdf(ab, z_flat) for w, p in zip(model.weights, model.priors)]
    )
    m = logs.max()
    return float(m + np.log(np.sum(np.exp(logs - m))))


def rbf_covariance(shape, lengthscale: float, scale: float = 1.0, jitter: float = 1e-10):
    """Squared-exponential covariance over the pixel coordinates of a grid.

    Returns an (n, n) matrix for a (C, H, W) shape (channels independent,
    block diagonal). A small diagonal jitter keeps the Cholesky factor stable.
    """
    c, h, w = shape
    if lengthscale <= 0 or scale <= 0:
        raise ValidationError("lengthscale and scale must be positive")
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pts = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    block = scale * np.exp(-0.5 * d2 / lengthscale**2)
    n = c * h * w
    cov = np.zeros((n, n))
    for k in range(c):
        cov[k * h * w : (k + 1) * h * w, k * h * w : (k + 1) * h * w] = block
    cov[np.diag_indices(n)] += jitter
    return cov
