"""Independent closed-form references used by the test suite.

These derivations deliberately avoid the sampler/score code paths: conditional
means come straight from joint-Gaussian algebra over flattened coordinates, so
they can serve as ground truth for Tweedie estimates and solver outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .field import Field
from .schedule import NoiseSchedule
from .score import GaussianPrior
from .solver import Measurement

__all__ = ["gaussian_conditional_mean", "masked_posterior", "MaskedPosterior", "clt_bound"]


def gaussian_conditional_mean(
    prior: GaussianPrior, z_t: Field, t: int, sched: NoiseSchedule
) -> Field:
    """Exact E[z0 | z_t] under z_t = sqrt(ab) z0 + sqrt(1-ab) eps.

    Joint-Gaussian algebra: with S = ab Sigma + (1-ab) I and Cov(z0, z_t) =
    sqrt(ab) Sigma, the conditional mean is mu + sqrt(ab) Sigma S^-1
    (z_t - sqrt(ab) mu). For a diagonal prior this reduces elementwise to
    (sqrt(ab) v z + (1-ab) mu) / (ab v + 1 - ab).
    """
    t = sched.check_timestep(t)
    ab = float(sched.alpha_bar[t])
    n = prior.size
    mu = prior.mean.data.reshape(n)
    z = z_t.data.reshape(n)
    if prior.is_dense:
        S = ab * prior.cov + (1.0 - ab) * np.eye(n)
        mean = mu + np.sqrt(ab) * (prior.cov @ np.linalg.solve(S, z - np.sqrt(ab) * mu))
    else:
        v = prior.diag
        mean = (np.sqrt(ab) * v * z + (1.0 - ab) * mu) / (ab * v + 1.0 - ab)
    return Field(mean.reshape(z_t.shape))


@dataclass(frozen=True)
class MaskedPosterior:
    """Exact conditional of a Gaussian prior given pinned masked coordinates.

    ``mean`` is a full field (observed coordinates pinned to y); ``cov`` is
    the posterior covariance over the unobserved coordinates only, ordered by
    ``free_indices`` (flat indices into the field).
    """

    mean: Field
    cov: np.ndarray
    free_indices: np.ndarray


def masked_posterior(prior: GaussianPrior, m: Measurement) -> MaskedPosterior:
    """Conditional distribution of x given M*x = y for a Gaussian prior.

    Requires the measurement at the prior's own resolution (identity codec);
    diagonal priors are handled as the dense special case. Textbook
    partitioned-Gaussian formulas: mean_2|1 = mu2 + S21 S11^-1 (y1 - mu1),
    cov_2|1 = S22 - S21 S11^-1 S12.
    """
    n = prior.size
    if m.mask.shape != prior.mean.shape:
        raise ValidationError(
            f"mask shape {m.mask.shape} != prior shape {prior.mean.shape}; "
            "masked_posterior needs an identity-resolution measurement"
        )
    cov = prior.cov if prior.is_dense else np.diag(prior.diag)
    mask_flat = m.mask.data.reshape(n) == 1.0
    obs = np.where(mask_flat)[0]
    free = np.where(~mask_flat)[0]
    mu = prior.mean.data.reshape(n)
    y = m.y.data.reshape(n)
    mean_full = np.where(mask_flat, y, mu).astype(np.float64)
    if free.size == 0:
        return MaskedPosterior(Field(mean_full.reshape(prior.mean.shape)),
                               np.zeros((0, 0)), free)
    if obs.size == 0:
        return MaskedPosterior(Field(mean_full.reshape(prior.mean.shape)),
                               cov[np.ix_(free, free)].copy(), free)
    s11 = cov[np.ix_(obs, obs)]
    s21 = cov[np.ix_(free, obs)]
    s22 = cov[np.ix_(free, free)]
    gain = s21 @ np.linalg.solve(s11, np.eye(obs.size))
    mean_free = mu[free] + gain @ (y[obs] - mu[obs])
    cov_free = s22 - gain @ s21.T
    mean_full[free] = mean_free
    return MaskedPosterior(
        Field(mean_full.reshape(prior.mean.shape)), cov_free, free
    )


def clt_bound(post: MaskedPosterior, n_samples: int) -> float:
    """Expected RMS fluctuation of an n-sample posterior mean over free coords."""
    if n_samples < 1:
        raise ValidationError("need n_samples >= 1")
    k = post.free_indices.size
    if k == 0:
        return 0.0
    return float(np.sqrt(np.trace(post.cov) / k / n_samples))
