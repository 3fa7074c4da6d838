"""Desk-scale laboratory for measurement-guided diffusion sampling.

Analytic Gaussian/mixture score oracles stand in for a trained denoiser so
that DDIM/DDPM sampling rules, initialization strategies, inverse solvers and
their correction steps can all be validated against closed-form references.
"""

from .codec import Codec, decode, encode
from .errors import (
    ConfigError,
    ScheduleIncompatibleError,
    ShapeError,
    SingularityError,
    UndefinedMetricError,
    ValidationError,
)
from .field import (
    Field,
    SpectralField,
    dft2,
    elementwise_blend,
    idft2,
    load_field_dump,
    radial_split,
    save_field_dump,
    write_pgm,
    write_ppm,
)
from .metrics import boundary_score, gradient_magnitude, posterior_error, psnr, ssim
from .oracle import MaskedPosterior, clt_bound, gaussian_conditional_mean, masked_posterior
from .sampler import InitStrategy, ddim_step, ddpm_step, initialize, make_rng, tweedie
from .schedule import (
    NoiseSchedule,
    TimestepPlan,
    default_schedule,
    forward_noise,
    make_plan,
    make_schedule,
)
from .score import (
    GaussianPrior,
    GuidanceSpec,
    MixtureScoreModel,
    epsilon,
    epsilon_cfg,
    log_marginal_density,
    rbf_covariance,
)
from .solver import (
    Measurement,
    SolverSpec,
    art_step,
    dps_step,
    dreamsampler_step,
    fig_step,
    frequency_correct,
    hybrid_noise,
    mcg_step,
    measurement_gradient,
    pixel_optimize,
    posthoc_replace,
    repaint_step,
    treg_step,
)
from .trajectory import StepRecord, TrajectoryLog, finalize, run_batch, run_trajectory

__version__ = "0.1.0"
