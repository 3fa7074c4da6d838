"""Core sampling updates: Tweedie estimate, DDIM/DDPM steps, initialization.

All randomness flows through explicitly passed ``numpy.random.Generator``
instances built on the Philox counter-based bit generator, so trajectories
are reproducible bit-for-bit across platforms from a single integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularityError, ValidationError
from .field import Field, _check_same_shape
from .schedule import NoiseSchedule

__all__ = [
    "InitStrategy",
    "tweedie",
    "ddim_step",
    "ddpm_step",
    "initialize",
    "make_rng",
]

INIT_KINDS = ("pure", "unmasked", "offset_noise", "prior_ddim", "prior_ddpm")


def make_rng(seed: int) -> np.random.Generator:
    """Seeded counter-based generator (Philox 4x64), portable across platforms."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class InitStrategy:
    """How to build the starting latent z_T.

    pure         standard normal noise
    unmasked     pure noise with the measurement region swapped for the
                 forward-noised encoded observation at t = T-1
    offset_noise pure noise plus offset_scale times one shared scalar draw
                 per channel
    prior_ddim   one deterministic DDIM step from pure noise at t = T-1
    prior_ddpm   one stochastic DDPM step from pure noise at t = T-1
    """

    kind: str = "pure"
    offset_scale: float = 0.1

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValidationError(f"unknown init kind {self.kind!r}, expected {INIT_KINDS}")


def _advance(z0: Field, eps: Field, alpha_bar_prev: float) -> Field:
    """Shared DDIM advance sqrt(ab_prev) z0 + sqrt(1 - ab_prev) eps.

    Every deterministic latent update in the package funnels through this
    helper so that degenerate solver configurations collapse onto the plain
    DDIM trajectory bit-for-bit.
    """
    return Field(
        np.sqrt(alpha_bar_prev) * z0.data + np.sqrt(1.0 - alpha_bar_prev) * eps.data
    )


def tweedie(z_t: Field, eps: Field, t: int, sched: NoiseSchedule) -> Field:
    """Posterior latent estimate (z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)."""
    _check_same_shape(z_t, eps)
    t = sched.check_timestep(t)
    ab = float(sched.alpha_bar[t])
    if ab <= 0.0:
        # schedule invariants keep alpha_bar > 0; guarded regardless
        raise SingularityError(f"alpha_bar at t={t} is zero")
    return Field((z_t.data - np.sqrt(1.0 - ab) * eps.data) / np.sqrt(ab))


def ddim_step(z_t: Field, eps: Field, t: int, t_prev: int, sched: NoiseSchedule) -> Field:
    """Deterministic update from level t to t_prev (t_prev = -1 lands on z0_hat)."""
    if t_prev >= t:
        raise ValidationError(f"need t_prev < t, got t_prev={t_prev}, t={t}")
    ab_prev = sched.alpha_bar_at(t_prev)
    return _advance(tweedie(z_t, eps, t, sched), eps, ab_prev)


def ddpm_step(
    z_t: Field, eps: Field, t: int, sched: NoiseSchedule, noise: Field
) -> Field:
    """Ancestral step t -> t-1 with posterior variance; t=0 is deterministic."""
    _check_same_shape(z_t, eps, noise)
    t = sched.check_timestep(t)
    alpha = float(sched.alpha[t])
    beta = float(sched.beta[t])
    ab = float(sched.alpha_bar[t])
    var = float(sched.posterior_var[t])  # 0 at t=0 by construction
    mean = (z_t.data - beta / np.sqrt(1.0 - ab) * eps.data) / np.sqrt(alpha)
    return Field(mean + np.sqrt(var) * noise.data)


def initialize(
    strategy: InitStrategy,
    model,
    measurement,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    c=None,
) -> Field:
    """Build the inference starting latent z_T.

    The prior strategies take their single step at t = T-1 (the training
    terminal index) and continue on the same RNG stream afterwards. ``model``
    only needs an ``epsilon(z, t, c, sched)`` method. ``measurement`` is
    required by the unmasked strategy and ignored otherwise.
    """
    shape = model.shape
    base = Field(rng.standard_normal(shape))
    kind = strategy.kind
    if kind == "pure":
        return base
    if kind == "offset_noise":
        per_channel = rng.standard_normal((shape[0], 1, 1))
        return Field(base.data + strategy.offset_scale * per_channel)
    if kind == "unmasked":
        if measurement is None:
            raise ValidationError("unmasked initialization requires a measurement")
        t_top = sched.T - 1
        ab = float(sched.alpha_bar[t_top])
        xi = rng.standard_normal(shape)
        noisy_obs = np.sqrt(ab) * measurement.y_bar.data + np.sqrt(1.0 - ab) * xi
        return Field(np.where(measurement.mask_bar.data == 1.0, noisy_obs, base.data))
    t_top = sched.T - 1
    eps = model.epsilon(base, t_top, c, sched)
    if kind == "prior_ddim":
        return ddim_step(base, eps, t_top, t_top - 1, sched)
    # prior_ddpm
    noise = Field(rng.standard_normal(shape))
    return ddpm_step(base, eps, t_top, sched, noise)
