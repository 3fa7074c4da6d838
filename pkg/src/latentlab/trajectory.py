"""Trajectory runner: alternates guided solver steps with plain denoising.

The runner owns the step sequence, the periodic standard-denoising pattern,
per-step diagnostics, and finalization. A trajectory is fully determined by
(seed, configuration); RNG consumption order is: initialization first, then
any solver draws in step order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .codec import Codec, decode
from .errors import ValidationError
from .field import Field
from .metrics import boundary_score
from .sampler import InitStrategy, _advance, initialize, make_rng, tweedie
from .schedule import NoiseSchedule, TimestepPlan
from .score import GuidanceSpec, MixtureScoreModel, epsilon_cfg
from .solver import Measurement, SolverSpec, apply_step, posthoc_replace

__all__ = ["StepRecord", "TrajectoryLog", "run_trajectory", "run_batch", "finalize"]


@dataclass(frozen=True)
class StepRecord:
    """State entering one step plus diagnostics of its clean estimate.

    The first record describes the initialization (no estimate yet). The
    measurement residual is the max-abs pixel error of the decoded estimate
    inside the measurement region; the boundary score is evaluated on the
    decoded estimate when the mask has a boundary.
    """

    index: int
    t: int
    t_prev: int | None
    guided: bool | None
    z_t: Field
    z0_hat: Field | None
    meas_residual: float | None
    boundary: float | None


@dataclass
class TrajectoryLog:
    seed: int
    timesteps: tuple
    records: list = field(default_factory=list)
    final_latent: Field | None = None
    final_raw: Field | None = None
    final_posthoc: Field | None = None
    output: Field | None = None


def _is_standard_step(i: int, n_steps: int, period: int | None) -> bool:
    """Every period-th step is a plain denoising step.

    period=None disables them, period=1 makes every step plain. For period
    >= 2 the final step always stays guided so the terminal constraint is
    applied.
    """
    if period is None:
        return False
    if period == 1:
        return True
    if i == n_steps - 1:
        return False
    return (i + 1) % period == 0


def _diagnostics(z0_hat: Field, m: Measurement | None, codec: Codec):
    if m is None:
        return None, None
    x0 = decode(codec, z0_hat)
    mk = m.mask.data
    resid = float(np.max(np.abs(mk * (x0.data - m.y.data)))) if mk.any() else 0.0
    bscore = None
    if mk.any() and not mk.all():
        bscore, _ = boundary_score(x0, m.mask, band=1)
    return resid, bscore


def run_trajectory(
    plan: TimestepPlan,
    strategy: InitStrategy,
    solver_spec: SolverSpec,
    model: MixtureScoreModel,
    measurement: Measurement | None,
    codec: Codec,
    sched: NoiseSchedule,
    seed: int,
    c=None,
    guidance: GuidanceSpec | None = None,
    keep_latents: bool = True,
    diagnostics: bool = True,
) -> TrajectoryLog:
    """Run one full sampling trajectory and return its log.

    ``keep_latents=False`` drops per-step latents from the records and
    ``diagnostics=False`` skips the per-step residual/boundary evaluation;
    both keep large statistical batches light.
    """
    plan.validate_against(sched)
    solver_spec.validate_for(plan, sched)
    if guidance is None:
        guidance = GuidanceSpec()
    if measurement is not None and measurement.codec != codec:
        raise ValidationError("measurement was built with a different codec")
    rng = make_rng(seed)
    z = initialize(strategy, model, measurement, sched, rng, c=c)
    log = TrajectoryLog(seed=seed, timesteps=plan.timesteps)
    log.records.append(
        StepRecord(0, plan.start_index, None, None, z if keep_latents else None, None, None, None)
    )
    n = len(plan)
    seq = list(plan.timesteps) + [-1]
    for i, (t, t_prev) in enumerate(zip(seq[:-1], seq[1:])):
        eps = epsilon_cfg(model, z, t, c, guidance, sched)
        z0_hat = tweedie(z, eps, t, sched)
        standard = _is_standard_step(i, n, solver_spec.denoise_period)
        if standard:
            z_next = _advance(z0_hat, eps, sched.alpha_bar_at(t_prev))
        else:
            z_next = apply_step(
                solver_spec,
                z_t=z,
                eps=eps,
                z0_hat=z0_hat,
                t=t,
                t_prev=t_prev,
                m=measurement,
                codec=codec,
                model=model,
                c=c,
                guidance=guidance,
                sched=sched,
                rng=rng,
            )
        resid, bscore = _diagnostics(z0_hat, measurement, codec) if diagnostics else (None, None)
        log.records.append(
            StepRecord(
                i + 1,
                t,
                t_prev,
                not standard,
                z if keep_latents else None,
                z0_hat if keep_latents else None,
                resid,
                bscore,
            )
        )
        z = z_next
    log.final_latent = z
    log.final_raw = decode(codec, z)
    if measurement is not None:
        log.final_posthoc = posthoc_replace(log.final_raw, measurement)
    log.output = finalize(log, measurement, solver_spec)
    return log


def finalize(log: TrajectoryLog, m: Measurement | None, spec: SolverSpec) -> Field:
    """Select the configured final output (raw decode or post-hoc replaced)."""
    if log.final_raw is None:
        raise ValidationError("trajectory incomplete: no final output recorded")
    if spec.resolved_finalize_posthoc:
        if m is None:
            raise ValidationError("post-hoc finalization requires a measurement")
        if log.final_posthoc is None:
            log.final_posthoc = posthoc_replace(log.final_raw, m)
        return log.final_posthoc
    return log.final_raw


def run_batch(
    plan,
    strategy,
    solver_spec,
    model,
    measurement,
    codec,
    sched,
    seeds,
    c=None,
    guidance=None,
    threads: int = 1,
    keep_latents: bool = False,
    diagnostics: bool = False,
) -> list:
    """Run independent trajectories for each seed, results in seed order.

    Trajectories share no mutable state; with ``threads > 1`` they execute
    concurrently but the returned list is always ordered by position in
    ``seeds``.
    """
    def one(seed):
        return run_trajectory(
            plan, strategy, solver_spec, model, measurement, codec, sched,
            seed, c=c, guidance=guidance, keep_latents=keep_latents,
            diagnostics=diagnostics,
        )

    seeds = list(seeds)
    if threads <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))
