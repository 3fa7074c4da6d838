"""Noise schedules and inference timestep plans for DDPM/DDIM sampling.

Timesteps are zero-based: a schedule with ``T`` steps covers t = 0 .. T-1,
with t = T-1 the noisiest level. The sentinel t = -1 denotes the fully clean
endpoint and maps to alpha_bar = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .field import Field, _check_same_shape

__all__ = ["NoiseSchedule", "TimestepPlan", "make_schedule", "make_plan", "forward_noise"]

SCHEDULE_KINDS = ("constant", "linear", "scaled_linear")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta/alpha tables and derived quantities.

    beta[t] is the per-step noise rate, alpha[t] = 1 - beta[t],
    alpha_bar[t] the running product of alpha, and posterior_var[t] the
    posterior ("beta tilde") variance used by ancestral DDPM steps, with
    posterior_var[0] = 0.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)
    posterior_var: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.shape != (self.T,):
            raise ValidationError(f"beta must have shape ({self.T},), got {beta.shape}")
        if self.T < 2:
            raise ValidationError(f"need T >= 2, got {self.T}")
        if not np.all((beta > 0.0) & (beta < 1.0)):
            raise ValidationError("every beta must lie strictly inside (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        if not np.all(np.diff(alpha_bar) < 0.0):
            raise ValidationError("alpha_bar must be strictly decreasing")
        prev = np.concatenate(([1.0], alpha_bar[:-1]))
        posterior_var = (1.0 - prev) / (1.0 - alpha_bar) * beta
        beta.setflags(write=False)
        alpha.setflags(write=False)
        alpha_bar.setflags(write=False)
        posterior_var.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)
        object.__setattr__(self, "posterior_var", posterior_var)

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        return cls(T=len(betas), beta=betas)

    def check_timestep(self, t: int) -> int:
        t = int(t)
        if not (0 <= t < self.T):
            raise ValidationError(f"timestep {t} outside [0, {self.T - 1}]")
        return t

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar lookup extended with the clean endpoint t = -1 -> 1.0."""
        t = int(t)
        if t == -1:
            return 1.0
        return float(self.alpha_bar[self.check_timestep(t)])


def make_schedule(kind: str, T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Build a noise schedule.

    constant uses beta_start for every step; linear interpolates beta itself;
    scaled_linear interpolates sqrt(beta) (the latent-diffusion convention).
    """
    if kind not in SCHEDULE_KINDS:
        raise ValidationError(f"unknown schedule kind {kind!r}, expected one of {SCHEDULE_KINDS}")
    if T < 2:
        raise ValidationError(f"need T >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if kind == "constant":
        beta = np.full(T, beta_start)
    elif kind == "linear":
        beta = np.linspace(beta_start, beta_end, T)
    else:
        beta = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T) ** 2
    return NoiseSchedule(T=T, beta=beta)


def default_schedule() -> NoiseSchedule:
    """scaled_linear, T=1000, beta in [8.5e-4, 1.2e-2] (latent-diffusion style)."""
    return make_schedule("scaled_linear", 1000, 8.5e-4, 1.2e-2)


@dataclass(frozen=True)
class TimestepPlan:
    """Ordered inference timesteps, strictly decreasing, within [0, T-1]."""

    timesteps: tuple

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        if len(ts) < 1:
            raise ValidationError("plan must contain at least one timestep")
        if any(t < 0 for t in ts):
            raise ValidationError("plan timesteps must be >= 0")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("plan timesteps must be strictly decreasing")
        object.__setattr__(self, "timesteps", ts)

    @property
    def start_index(self) -> int:
        return self.timesteps[0]

    def __len__(self):
        return len(self.timesteps)

    def validate_against(self, sched: NoiseSchedule) -> None:
        if self.start_index >= sched.T:
            raise ValidationError(
                f"plan start {self.start_index} outside schedule range [0, {sched.T - 1}]"
            )


def make_plan(T: int, steps: int, start: int) -> TimestepPlan:
    """Evenly spaced descending timesteps: start, start-s, ... with s = T // steps.

    start=999, steps=50 gives 999, 979, ..., 19; start=981 gives the
    981, 961, ..., 1 convention many samplers default to.
    """
    if steps < 1:
        raise ValidationError(f"need steps >= 1, got {steps}")
    if not (0 <= start < T):
        raise ValidationError(f"start {start} outside [0, {T - 1}]")
    stride = max(T // steps, 1)
    ts = [start - i * stride for i in range(steps)]
    if ts[-1] < 0:
        raise ValidationError(
            f"plan underflows zero: start={start}, steps={steps}, stride={stride}"
        )
    return TimestepPlan(tuple(ts))


def forward_noise(x0: Field, t: int, noise: Field, sched: NoiseSchedule) -> Field:
    """Noise a clean field to level t: sqrt(ab_t) x0 + sqrt(1 - ab_t) noise."""
    _check_same_shape(x0, noise)
    t = sched.check_timestep(t)
    ab = sched.alpha_bar[t]
    return Field(np.sqrt(ab) * x0.data + np.sqrt(1.0 - ab) * noise.data)
