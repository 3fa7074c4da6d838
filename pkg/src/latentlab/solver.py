"""Measurement operators and per-step inverse-solver hooks.

Each solver is a correction applied around the shared deterministic advance at
one trajectory step. Hard-constraint solvers project the measurement region,
progressive solvers follow measurement-consistency gradients, hybrid solvers
re-encode a pixel-space optimization and inject controlled stochastic noise,
and the full guided solver combines pixel-space replacement, data-consistency
interpolation and spectral high-frequency correction.

Degenerate configurations (zero gradient step, disabled projection, empty
measurement region, disabled noise rule) are structured so the solver output
is bit-for-bit the plain DDIM trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import Codec, decode, encode
from .errors import ScheduleIncompatibleError, ShapeError, ValidationError
from .field import Field, _check_same_shape, elementwise_blend, radial_split
from .sampler import _advance, tweedie
from .schedule import NoiseSchedule, TimestepPlan
from .score import GuidanceSpec, MixtureScoreModel, epsilon_cfg

__all__ = [
    "Measurement",
    "SolverSpec",
    "posthoc_replace",
    "repaint_step",
    "mcg_step",
    "dps_step",
    "fig_step",
    "pixel_optimize",
    "hybrid_noise",
    "dreamsampler_step",
    "treg_step",
    "art_step",
    "frequency_correct",
    "measurement_gradient",
    "apply_step",
]

SOLVER_KINDS = (
    "none",
    "posthoc_only",
    "repaint",
    "mcg",
    "dps",
    "fig",
    "dreamsampler",
    "treg",
    "art",
)

ETA_BETA_RULES = ("none", "dreamsampler", "treg")

# solvers that cannot fully preserve measurements get post-hoc replacement
# by default; the pixel-space ones do not need it
_DEFAULT_POSTHOC = {
    "none": False,
    "posthoc_only": True,
    "repaint": True,
    "mcg": True,
    "dps": True,
    "fig": True,
    "dreamsampler": False,
    "treg": False,
    "art": False,
}


class Measurement:
    """Binary pixel mask, masked observation, and their latent-resolution twins.

    ``mask`` is 1 on the measured (preserved) region. ``y`` is zero outside the
    mask. ``mask_bar`` is the codec-downsampled mask thresholded at 0.5 (means
    >= 0.5 count as measured) and ``y_bar`` the downsampled observation zeroed
    outside ``mask_bar``.
    """

    def __init__(self, mask: Field, y: Field, codec: Codec, noise_std: float = 0.0):
        _check_same_shape(mask, y)
        m = mask.data
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValidationError("measurement mask values must be exactly 0 or 1")
        if noise_std < 0:
            raise ValidationError(f"noise_std must be >= 0, got {noise_std}")
        if np.any(y.data[m == 0.0] != 0.0):
            raise ValidationError("observation must be zero outside the mask")
        self.mask = mask
        self.y = y
        self.noise_std = float(noise_std)
        self.codec = codec
        down = encode(codec, mask)
        bar = np.where(down.data >= 0.5, 1.0, 0.0)
        self.mask_bar = Field(bar)
        self.y_bar = Field(np.where(bar == 1.0, encode(codec, y).data, 0.0))

    @classmethod
    def from_truth(
        cls,
        x_true: Field,
        mask: Field,
        codec: Codec,
        noise_std: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> "Measurement":
        """Build y = mask * x_true (plus optional masked Gaussian noise)."""
        if noise_std > 0:
            if rng is None:
                raise ValidationError("noisy measurements need an rng")
            noisy = x_true.data + noise_std * rng.standard_normal(x_true.shape)
            y = Field(np.where(mask.data == 1.0, noisy, 0.0))
        else:
            y = Field(np.where(mask.data == 1.0, x_true.data, 0.0))
        return cls(mask, y, codec, noise_std)

    @property
    def is_empty(self) -> bool:
        return not bool(self.mask.data.any())


@dataclass(frozen=True)
class SolverSpec:
    """Full solver configuration.

    gamma            gradient step size for mcg/dps/fig
    eta_beta_rule    stochastic noise amplitude rule for hybrid solvers
                     (None picks the solver's own rule; "none" disables)
    pixel_*          pixel-space optimization settings (paper defaults)
    freq_cutoff      radial cutoff for the spectral correction
    denoise_period   every N-th step is a plain denoising step
                     (None = never, 1 = every step)
    finalize_posthoc overwrite the measurement region of the final output
                     (None picks the per-kind default)
    mcg_projection   keep the hard projection after the MCG gradient
    art_interp_mode  "alphabar" interpolation or "hard" replacement
    art_freq_correction  toggle the spectral correction component
    """

    kind: str = "none"
    gamma: float = 1.0
    eta_beta_rule: str | None = None
    pixel_lr: float = 1e-3
    pixel_lambda: float = 1e-4
    pixel_iters: int = 1000
    pixel_closed_form: bool = False
    freq_cutoff: float = 0.5
    denoise_period: int | None = 2
    finalize_posthoc: bool | None = None
    mcg_projection: bool = True
    art_interp_mode: str = "alphabar"
    art_freq_correction: bool = True

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValidationError(f"unknown solver kind {self.kind!r}, expected {SOLVER_KINDS}")
        if self.eta_beta_rule is not None and self.eta_beta_rule not in ETA_BETA_RULES:
            raise ValidationError(
                f"unknown eta_beta_rule {self.eta_beta_rule!r}, expected {ETA_BETA_RULES}"
            )
        if self.pixel_lr <= 0 or self.pixel_lambda <= 0 or self.pixel_iters < 1:
            raise ValidationError("pixel optimizer settings must be positive")
        if not (0.0 <= self.freq_cutoff <= 1.0):
            raise ValidationError(f"freq_cutoff must lie in [0, 1], got {self.freq_cutoff}")
        if self.denoise_period is not None and self.denoise_period < 1:
            raise ValidationError(f"denoise_period must be >= 1 or None, got {self.denoise_period}")
        if self.art_interp_mode not in ("alphabar", "hard"):
            raise ValidationError(f"art_interp_mode must be 'alphabar' or 'hard'")

    @property
    def resolved_eta_rule(self) -> str:
        if self.eta_beta_rule is not None:
            return self.eta_beta_rule
        if self.kind in ("dreamsampler", "treg"):
            return self.kind
        return "none"

    @property
    def resolved_finalize_posthoc(self) -> bool:
        if self.finalize_posthoc is not None:
            return self.finalize_posthoc
        return _DEFAULT_POSTHOC[self.kind]

    def validate_for(self, plan: TimestepPlan, sched: NoiseSchedule) -> None:
        """Check the stochastic-noise radicand at every planned transition."""
        rule = self.resolved_eta_rule
        if rule == "none":
            return
        seq = list(plan.timesteps) + [-1]
        for t, t_prev in zip(seq[:-1], seq[1:]):
            ab_prev = sched.alpha_bar_at(t_prev)
            if ab_prev == 1.0:
                continue  # terminal step has zero stochastic coefficient
            eb = _eta_beta(rule, float(sched.alpha_bar[t]), ab_prev)
            if 1.0 - ab_prev - eb * eb < -1e-15:
                raise ScheduleIncompatibleError(
                    f"eta*beta rule {rule!r} exceeds the noise budget at t={t}"
                )


def posthoc_replace(x_gen: Field, m: Measurement) -> Field:
    """Overwrite the measurement region of a finished sample with y."""
    if x_gen.shape != m.mask.shape:
        raise ShapeError(f"sample shape {x_gen.shape} != mask shape {m.mask.shape}")
    return elementwise_blend(m.mask, m.y, x_gen)


def _noisy_observation(m: Measurement, ab_prev: float, rng: np.random.Generator) -> np.ndarray:
    """Draw y_bar noised to the t_prev level: N(sqrt(ab) y_bar, (1-ab) I)."""
    xi = rng.standard_normal(m.y_bar.shape)
    return np.sqrt(ab_prev) * m.y_bar.data + np.sqrt(1.0 - ab_prev) * xi


def repaint_step(
    z_prev: Field, t_prev: int, m: Measurement, sched: NoiseSchedule, rng: np.random.Generator
) -> Field:
    """Replace the measurement region with a noised observation (no resampling)."""
    ab_prev = sched.alpha_bar_at(t_prev)
    draw = _noisy_observation(m, ab_prev, rng)
    return Field(np.where(m.mask_bar.data == 1.0, draw, z_prev.data))


def measurement_gradient(
    model: MixtureScoreModel,
    z_t: Field,
    t: int,
    c,
    guidance: GuidanceSpec,
    sched: NoiseSchedule,
    m: Measurement,
) -> Field:
    """Gradient of || y_bar - M_bar * z0_hat(z_t) ||^2 with respect to z_t.

    z0_hat is the Tweedie estimate through the (CFG-combined) exact noise
    prediction. When the active prediction is affine in z_t (a labeled
    component, or a single-component mixture) the gradient is evaluated in
    closed form through the constant Jacobian; otherwise central finite
    differences are used.
    """
    t = sched.check_timestep(t)
    ab = float(sched.alpha_bar[t])
    s = guidance.cfg_scale
    single = len(model.priors) == 1

    def affine_parts():
        if s == 1.0:
            return [(1.0, c)] if (c is not None or single) else None
        if s == 0.0:
            return [(1.0, None)] if single else None
        if single:
            return [(1.0, None)]  # all branches share the one component
        if c is not None:
            return None  # null branch is a true mixture
        return None

    parts = affine_parts()
    eps = epsilon_cfg(model, z_t, t, c, guidance, sched)
    z0 = tweedie(z_t, eps, t, sched)
    resid = m.y_bar.data - m.mask_bar.data * z0.data
    cot = (-2.0 * m.mask_bar.data * resid).reshape(-1)

    if parts is not None:
        grad = np.zeros_like(cot)
        for weight, label in parts:
            prior = model.component(label) if label is not None else model.priors[0]
            grad += weight * prior.posterior_jacobian_apply(ab, cot)
        return Field(grad.reshape(z_t.shape))

    # finite-difference fallback (multi-component mixture under the null label)
    def loss(arr: np.ndarray) -> float:
        zf = Field(arr.reshape(z_t.shape))
        e = epsilon_cfg(model, zf, t, c, guidance, sched)
        r = m.y_bar.data - m.mask_bar.data * tweedie(zf, e, t, sched).data
        return float(np.sum(r * r))

    base = z_t.data.reshape(-1).copy()
    grad = np.zeros_like(base)
    for i in range(base.size):
        h = 6e-6 * (1.0 + abs(base[i]))
        up = base.copy()
        dn = base.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (loss(up) - loss(dn)) / (2.0 * h)
    return Field(grad.reshape(z_t.shape))


def mcg_step(
    z_t: Field,
    z_prev: Field,
    z0_hat: Field,
    t: int,
    t_prev: int,
    m: Measurement,
    spec: SolverSpec,
    model: MixtureScoreModel,
    c,
    guidance: GuidanceSpec,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> Field:
    """Measurement gradient followed by the hard RePaint-style projection."""
    z = z_prev
    if spec.gamma != 0.0:
        grad = measurement_gradient(model, z_t, t, c, guidance, sched, m)
        z = z - spec.gamma * grad
    if spec.mcg_projection:
        z = repaint_step(z, t_prev, m, sched, rng)
    return z


def dps_step(
    z_t: Field,
    z_prev: Field,
    z0_hat: Field,
    t: int,
    m: Measurement,
    spec: SolverSpec,
    model: MixtureScoreModel,
    c,
    guidance: GuidanceSpec,
    sched: NoiseSchedule,
) -> Field:
    """Measurement-consistency gradient on the advanced latent, no projection."""
    if spec.gamma == 0.0:
        return z_prev
    grad = measurement_gradient(model, z_t, t, c, guidance, sched, m)
    return z_prev - spec.gamma * grad


def fig_step(
    z_prev: Field,
    t_prev: int,
    m: Measurement,
    spec: SolverSpec,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> Field:
    """Gradient step on the noisy latent toward a noised observation.

    The objective || y_{t-1} - M * z ||^2 has the closed-form gradient
    2 M (M z - y_{t-1}).
    """
    if spec.gamma == 0.0:
        return z_prev
    ab_prev = sched.alpha_bar_at(t_prev)
    draw = _noisy_observation(m, ab_prev, rng)
    mb = m.mask_bar.data
    grad = 2.0 * mb * (mb * z_prev.data - draw)
    return Field(z_prev.data - spec.gamma * grad)


def pixel_optimize(
    y: Field,
    mask: Field,
    anchor: Field,
    lr: float = 1e-3,
    lam: float = 1e-4,
    iters: int = 1000,
    closed_form: bool = False,
) -> Field:
    """Minimize ||y - M*x||^2 + lam ||x - anchor||^2 over pixel fields.

    The minimizer is elementwise: (y + lam*anchor) / (1 + lam) on measured
    pixels, anchor elsewhere. ``closed_form=True`` returns it directly; the
    iterative path runs plain gradient descent from the measurement-consistent
    start x0 = M*y + (1-M)*anchor, which the regularizer then pulls the small
    remaining distance toward the minimizer.
    """
    _check_same_shape(y, mask, anchor)
    if lam <= 0:
        raise ValidationError(f"lam must be positive, got {lam}")
    mk = mask.data
    if not np.all((mk == 0.0) | (mk == 1.0)):
        raise ValidationError("mask values must be exactly 0 or 1")
    if closed_form:
        best = (y.data + lam * anchor.data) / (1.0 + lam)
        return Field(np.where(mk == 1.0, best, anchor.data))
    x = np.where(mk == 1.0, y.data, anchor.data)
    for _ in range(iters):
        grad = 2.0 * mk * (mk * x - y.data) + 2.0 * lam * (x - anchor.data)
        x = x - lr * grad
    return Field(x)


def _eta_beta(rule: str, ab_t: float, ab_prev: float) -> float:
    if rule == "dreamsampler":
        return float(np.sqrt(ab_t * (1.0 - ab_prev)))
    if rule == "treg":
        return float(np.sqrt(ab_prev * (1.0 - ab_prev)))
    return 0.0


def hybrid_noise(
    eps_pred: Field,
    t: int,
    t_prev: int,
    rule: str,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> Field:
    """Blend the prediction with fresh noise at amplitude eta*beta_t.

    Returns (sqrt(1 - ab_prev - (eta beta)^2) eps + eta beta xi) / sqrt(1 - ab_prev).
    A disabled rule returns the prediction itself, exactly.
    """
    if rule not in ETA_BETA_RULES:
        raise ValidationError(f"unknown eta_beta rule {rule!r}")
    t = sched.check_timestep(t)
    ab_t = float(sched.alpha_bar[t])
    ab_prev = sched.alpha_bar_at(t_prev)
    eb = _eta_beta(rule, ab_t, ab_prev)
    if eb == 0.0:
        return eps_pred
    if ab_prev >= 1.0:
        raise ScheduleIncompatibleError(
            f"stochastic noise undefined at the clean endpoint (t={t})"
        )
    radicand = 1.0 - ab_prev - eb * eb
    if radicand < 0.0:
        raise ScheduleIncompatibleError(
            f"eta*beta rule {rule!r} exceeds the noise budget at t={t}"
        )
    xi = rng.standard_normal(eps_pred.shape)
    mixed = np.sqrt(radicand) * eps_pred.data + eb * xi
    return Field(mixed / np.sqrt(1.0 - ab_prev))


def _stochastic_eps(
    eps: Field, t: int, t_prev: int, spec: SolverSpec, sched: NoiseSchedule, rng
) -> Field:
    """eps-tilde for hybrid steps; the terminal step's coefficient is zero."""
    rule = spec.resolved_eta_rule
    if rule == "none" or sched.alpha_bar_at(t_prev) == 1.0:
        return eps
    return hybrid_noise(eps, t, t_prev, rule, sched, rng)


def treg_step(
    z0_hat: Field,
    eps: Field,
    t: int,
    t_prev: int,
    m: Measurement,
    codec: Codec,
    spec: SolverSpec,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> Field:
    """Pixel-space regularized optimization, re-encode, interpolate, advance."""
    ab_prev = sched.alpha_bar_at(t_prev)
    if m is None or m.is_empty:
        return _advance(z0_hat, _stochastic_eps(eps, t, t_prev, spec, sched, rng), ab_prev)
    anchor = decode(codec, z0_hat)
    x_y = pixel_optimize(
        m.y, m.mask, anchor, spec.pixel_lr, spec.pixel_lambda, spec.pixel_iters,
        spec.pixel_closed_form,
    )
    z_y = encode(codec, x_y)
    interp = Field(ab_prev * z_y.data + (1.0 - ab_prev) * z0_hat.data)
    return _advance(interp, _stochastic_eps(eps, t, t_prev, spec, sched, rng), ab_prev)


def dreamsampler_step(
    z_t: Field,
    z0_hat: Field,
    eps: Field,
    t: int,
    t_prev: int,
    m: Measurement,
    codec: Codec,
    model: MixtureScoreModel,
    spec: SolverSpec,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> Field:
    """Null-conditioned pixel/latent optimization with masked recombination."""
    ab_t = float(sched.alpha_bar[sched.check_timestep(t)])
    ab_prev = sched.alpha_bar_at(t_prev)
    if m is None or m.is_empty:
        return _advance(z0_hat, _stochastic_eps(eps, t, t_prev, spec, sched, rng), ab_prev)
    eps_null = model.epsilon(z_t, t, None, sched)
    z0_null = tweedie(z_t, eps_null, t, sched)
    x_y_null = pixel_optimize(
        m.y, m.mask, decode(codec, z0_null), spec.pixel_lr, spec.pixel_lambda,
        spec.pixel_iters, spec.pixel_closed_form,
    )
    z_y_null = encode(codec, x_y_null)
    interp = ab_prev * z_y_null.data + (1.0 - ab_prev) * z0_null.data
    outside = ab_t * z0_hat.data + (1.0 - ab_t) * interp
    combined = Field(np.where(m.mask_bar.data == 1.0, interp, outside))
    return _advance(combined, _stochastic_eps(eps, t, t_prev, spec, sched, rng), ab_prev)


def frequency_correct(z_y: Field, z0_hat: Field, cutoff: float) -> Field:
    """Keep z_y below the radial cutoff, take z0_hat's content above it."""
    low_y, _ = radial_split(z_y, cutoff)
    _, high_0 = radial_split(z0_hat, cutoff)
    return low_y + high_0


def art_step(
    z0_hat: Field,
    eps: Field,
    t_prev: int,
    m: Measurement,
    codec: Codec,
    spec: SolverSpec,
    sched: NoiseSchedule,
) -> Field:
    """Guided step: pixel replacement, spectral correction, interpolation.

    1. Replace the measurement region of the decoded estimate with y and
       re-encode.
    2. Restore above-cutoff spectral content from the model's own estimate.
    3. Interpolate toward the estimate inside the measurement region with
       weight alpha_bar(t_prev) (or replace outright in "hard" mode) and
       advance deterministically with the same noise prediction.
    """
    ab_prev = sched.alpha_bar_at(t_prev)
    if m is None or m.is_empty:
        return _advance(z0_hat, eps, ab_prev)
    x0 = decode(codec, z0_hat)
    x_y = elementwise_blend(m.mask, m.y, x0)
    z_y = encode(codec, x_y)
    if spec.art_freq_correction:
        z_y = frequency_correct(z_y, z0_hat, spec.freq_cutoff)
    if spec.art_interp_mode == "hard":
        target = z_y.data
    else:
        target = ab_prev * z_y.data + (1.0 - ab_prev) * z0_hat.data
    mixed = Field(np.where(m.mask_bar.data == 1.0, target, z0_hat.data))
    return _advance(mixed, eps, ab_prev)


def apply_step(
    spec: SolverSpec,
    *,
    z_t: Field,
    eps: Field,
    z0_hat: Field,
    t: int,
    t_prev: int,
    m: Measurement | None,
    codec: Codec,
    model: MixtureScoreModel,
    c,
    guidance: GuidanceSpec,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> Field:
    """Run one guided step of the configured solver kind."""
    kind = spec.kind
    ab_prev = sched.alpha_bar_at(t_prev)
    if kind in ("none", "posthoc_only"):
        return _advance(z0_hat, eps, ab_prev)
    if kind in ("repaint", "mcg", "dps", "fig") and (m is None or m.is_empty):
        # nothing measured: the corrections below are exact no-ops, skip them
        return _advance(z0_hat, eps, ab_prev)
    if kind == "repaint":
        z_prev = _advance(z0_hat, eps, ab_prev)
        return repaint_step(z_prev, t_prev, m, sched, rng)
    if kind == "mcg":
        z_prev = _advance(z0_hat, eps, ab_prev)
        return mcg_step(z_t, z_prev, z0_hat, t, t_prev, m, spec, model, c, guidance, sched, rng)
    if kind == "dps":
        z_prev = _advance(z0_hat, eps, ab_prev)
        return dps_step(z_t, z_prev, z0_hat, t, m, spec, model, c, guidance, sched)
    if kind == "fig":
        z_prev = _advance(z0_hat, eps, ab_prev)
        return fig_step(z_prev, t_prev, m, spec, sched, rng)
    if kind == "dreamsampler":
        return dreamsampler_step(z_t, z0_hat, eps, t, t_prev, m, codec, model, spec, sched, rng)
    if kind == "treg":
        return treg_step(z0_hat, eps, t, t_prev, m, codec, spec, sched, rng)
    if kind == "art":
        return art_step(z0_hat, eps, t_prev, m, codec, spec, sched)
    raise ValidationError(f"unhandled solver kind {kind!r}")
