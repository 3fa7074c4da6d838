"""Experiment configuration: JSON schema, validation, and object construction.

One experiment per JSON document. Validation errors carry the dotted key path
of the offending entry (ConfigError) so the CLI can print a structured report.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .codec import CODEC_KINDS, Codec, decode
from .errors import ConfigError, ValidationError
from .field import Field
from .sampler import INIT_KINDS, InitStrategy, make_rng
from .schedule import SCHEDULE_KINDS, NoiseSchedule, TimestepPlan, make_plan, make_schedule
from .score import GaussianPrior, GuidanceSpec, MixtureScoreModel, rbf_covariance
from .solver import SOLVER_KINDS, Measurement, SolverSpec

__all__ = ["ExperimentConfig", "load_config", "pattern_field", "mask_field"]

PATTERN_KINDS = ("constant", "gradient", "sinusoid", "checkerboard", "sample")
MASK_KINDS = ("half_plane", "rectangle", "stencil")

_SOLVER_KEYS = {
    "gamma": "gamma",
    "eta_beta_rule": "eta_beta_rule",
    "pixel_lr": "pixel_lr",
    "pixel_lambda": "pixel_lambda",
    "pixel_iters": "pixel_iters",
    "pixel_closed_form": "pixel_closed_form",
    "freq_cutoff": "freq_cutoff",
    "denoise_period": "denoise_period",
    "finalize_posthoc": "finalize_posthoc",
    "mcg_projection": "mcg_projection",
    "art_interp_mode": "art_interp_mode",
    "art_freq_correction": "art_freq_correction",
}


def _require(cond, key, msg):
    if not cond:
        raise ConfigError(key, msg)


def _get(d, key, path, default=_SOLVER_KEYS):  # sentinel default
    if key not in d:
        if default is _SOLVER_KEYS:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
        return default
    return d[key]


def pattern_field(spec: dict, shape, rng=None, model=None, key="pattern") -> Field:
    """Build a deterministic pattern field (or a prior sample) of given shape."""
    kind = _get(spec, "pattern", key)
    _require(kind in PATTERN_KINDS, f"{key}.pattern", f"unknown pattern {kind!r}")
    c, h, w = shape
    if kind == "constant":
        return Field.full(c, h, w, float(spec.get("value", 0.0)))
    if kind == "gradient":
        lo = float(spec.get("lo", -1.0))
        hi = float(spec.get("hi", 1.0))
        axis = spec.get("axis", "y")
        _require(axis in ("x", "y"), f"{key}.axis", "axis must be 'x' or 'y'")
        ramp = np.linspace(lo, hi, h if axis == "y" else w)
        plane = np.tile(ramp[:, None], (1, w)) if axis == "y" else np.tile(ramp[None, :], (h, 1))
        return Field(np.broadcast_to(plane, shape).copy())
    if kind == "sinusoid":
        amp = float(spec.get("amplitude", 1.0))
        fx = float(spec.get("freq_x", 2.0))
        fy = float(spec.get("freq_y", 0.0))
        phase = float(spec.get("phase", 0.0))
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        plane = amp * np.sin(2 * np.pi * (fy * ii / h + fx * jj / w) + phase)
        return Field(np.broadcast_to(plane, shape).copy())
    if kind == "checkerboard":
        amp = float(spec.get("amplitude", 1.0))
        cell = int(spec.get("cell", 1))
        _require(cell >= 1, f"{key}.cell", "cell must be >= 1")
        ii, jj = np.meshgrid(np.arange(h) // cell, np.arange(w) // cell, indexing="ij")
        plane = amp * np.where((ii + jj) % 2 == 0, 1.0, -1.0)
        return Field(np.broadcast_to(plane, shape).copy())
    # sample: drawn from the mixture prior (latent draw decoded by the caller)
    _require(model is not None and rng is not None, f"{key}.pattern",
             "'sample' pattern needs a prior and rng")
    return model.sample(rng, c=spec.get("label"))


def mask_field(spec: dict, shape, key="measurement.mask") -> Field:
    """Binary measurement mask (1 = measured/preserved, 0 = free/generated)."""
    kind = _get(spec, "kind", key)
    _require(kind in MASK_KINDS, f"{key}.kind", f"unknown mask kind {kind!r}")
    c, h, w = shape
    if kind == "half_plane":
        axis = spec.get("axis", "x")
        frac = float(spec.get("frac", 0.5))
        _require(axis in ("x", "y"), f"{key}.axis", "axis must be 'x' or 'y'")
        _require(0.0 < frac < 1.0, f"{key}.frac", "frac must lie in (0, 1)")
        m = np.zeros((h, w))
        if axis == "x":
            m[:, : int(round(frac * w))] = 1.0
        else:
            m[: int(round(frac * h)), :] = 1.0
    elif kind == "rectangle":
        r0 = int(spec.get("r0", h // 4))
        c0 = int(spec.get("c0", w // 4))
        r1 = int(spec.get("r1", (3 * h) // 4))
        c1 = int(spec.get("c1", (3 * w) // 4))
        _require(0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w, key,
                 f"rectangle [{r0}:{r1}, {c0}:{c1}] outside {h}x{w} grid")
        m = np.ones((h, w))
        m[r0:r1, c0:c1] = 0.0
    else:  # stencil: torso ellipse plus a sleeve band, hole = try-on region
        ii, jj = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
        cy, cx = 0.55 * h, 0.50 * w
        ry, rx = 0.30 * h, 0.22 * w
        torso = ((ii - cy) / ry) ** 2 + ((jj - cx) / rx) ** 2 <= 1.0
        band = (ii >= 0.36 * h) & (ii <= 0.50 * h) & (jj >= 0.16 * w) & (jj <= 0.84 * w)
        m = np.where(torso | band, 0.0, 1.0)
    return Field(m[None, :, :])


def _build_prior(entry: dict, latent_shape, key: str) -> GaussianPrior:
    mean_spec = _get(entry, "mean", key)
    mean = pattern_field(mean_spec, latent_shape, key=f"{key}.mean")
    var_spec = _get(entry, "variance", key)
    if isinstance(var_spec, dict):
        rbf = _get(var_spec, "rbf", f"{key}.variance")
        ls = float(_get(rbf, "lengthscale", f"{key}.variance.rbf"))
        scale = float(rbf.get("scale", 1.0))
        try:
            cov = rbf_covariance(latent_shape, ls, scale)
            return GaussianPrior(mean, cov)
        except ValidationError as e:
            raise ConfigError(f"{key}.variance.rbf", str(e)) from e
    try:
        if isinstance(var_spec, list):
            return GaussianPrior(mean, np.asarray(var_spec, dtype=np.float64))
        return GaussianPrior(mean, float(var_spec))
    except ValidationError as e:
        raise ConfigError(f"{key}.variance", str(e)) from e


@dataclass
class SolverEntry:
    name: str
    spec: SolverSpec
    init: InitStrategy | None = None  # per-solver override of the shared init


@dataclass
class ExperimentConfig:
    """Validated experiment description plus constructed objects."""

    raw: dict
    shape: tuple
    sched: NoiseSchedule
    plan: TimestepPlan
    codec: Codec
    model: MixtureScoreModel
    condition: object
    guidance: GuidanceSpec
    init: InitStrategy
    mask_spec: dict
    pattern_spec: dict
    noise_std: float
    solvers: list
    trials: int
    seed: int
    peak: float
    ssim_window: int
    boundary_band: int

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = copy.deepcopy(raw)
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")

        shape = raw.get("shape", [1, 32, 32])
        _require(isinstance(shape, (list, tuple)) and len(shape) == 3
                 and all(isinstance(v, int) and v >= 1 for v in shape),
                 "shape", f"shape must be three positive integers, got {shape!r}")
        shape = tuple(shape)

        s = raw.get("schedule", {})
        kind = s.get("kind", "scaled_linear")
        _require(kind in SCHEDULE_KINDS, "schedule.kind", f"unknown kind {kind!r}")
        try:
            sched = make_schedule(kind, int(s.get("T", 1000)),
                                  float(s.get("beta_start", 8.5e-4)),
                                  float(s.get("beta_end", 1.2e-2)))
        except ValidationError as e:
            raise ConfigError("schedule", str(e)) from e

        p = raw.get("plan", {})
        try:
            plan = make_plan(sched.T, int(p.get("steps", 50)), int(p.get("start", sched.T - 1)))
        except ValidationError as e:
            raise ConfigError("plan", str(e)) from e

        cd = raw.get("codec", {})
        ck = cd.get("kind", "identity")
        _require(ck in CODEC_KINDS, "codec.kind", f"unknown kind {ck!r}")
        try:
            codec = Codec(ck, int(cd.get("factor", 2)), float(cd.get("sigma_e", 0.05)))
            latent_shape = codec.latent_shape(shape)
        except ValidationError as e:
            raise ConfigError("codec", str(e)) from e

        pr = raw.get("prior", {})
        comps = pr.get("components")
        _require(isinstance(comps, list) and comps, "prior.components",
                 "need a non-empty component list")
        priors, weights, labels = [], [], []
        for i, entry in enumerate(comps):
            key = f"prior.components[{i}]"
            priors.append(_build_prior(entry, latent_shape, key))
            weights.append(float(entry.get("weight", 1.0 / len(comps))))
            labels.append(entry.get("label", f"c{i}"))
        try:
            model = MixtureScoreModel(priors, weights, labels)
        except ValidationError as e:
            raise ConfigError("prior", str(e)) from e

        condition = raw.get("condition")
        if condition is not None:
            _require(condition in labels, "condition", f"label {condition!r} not in prior")
        try:
            guidance = GuidanceSpec(float(raw.get("cfg_scale", 1.0)))
        except ValidationError as e:
            raise ConfigError("cfg_scale", str(e)) from e

        init = _parse_init(raw.get("init", {}), "init")

        ms = raw.get("measurement", {})
        mask_spec = ms.get("mask", {"kind": "rectangle"})
        mask_field(mask_spec, shape)  # validate eagerly
        pattern_spec = ms.get("pattern", {"pattern": "constant", "value": 0.0})
        _require(pattern_spec.get("pattern") in PATTERN_KINDS, "measurement.pattern.pattern",
                 f"unknown pattern {pattern_spec.get('pattern')!r}")
        noise_std = float(ms.get("noise_std", 0.0))
        _require(noise_std >= 0.0, "measurement.noise_std", "must be >= 0")

        sv = raw.get("solvers")
        _require(isinstance(sv, list) and sv, "solvers", "need a non-empty solver list")
        solvers = []
        names = set()
        for i, entry in enumerate(sv):
            key = f"solvers[{i}]"
            skind = _get(entry, "kind", key)
            _require(skind in SOLVER_KINDS, f"{key}.kind", f"unknown solver kind {skind!r}")
            kwargs = {}
            for cfg_key, attr in _SOLVER_KEYS.items():
                if cfg_key in entry:
                    kwargs[attr] = entry[cfg_key]
            try:
                spec = SolverSpec(kind=skind, **kwargs)
                spec.validate_for(plan, sched)
            except (ValidationError, TypeError) as e:
                raise ConfigError(key, str(e)) from e
            name = entry.get("name", skind)
            _require(name not in names, f"{key}.name", f"duplicate solver name {name!r}")
            names.add(name)
            init_over = _parse_init(entry["init"], f"{key}.init") if "init" in entry else None
            solvers.append(SolverEntry(name, spec, init_over))

        trials = int(raw.get("trials", 1))
        _require(trials >= 1, "trials", f"must be >= 1, got {trials}")
        seed = int(raw.get("seed", 0))

        met = raw.get("metrics", {})
        peak = float(met.get("peak", 1.0))
        _require(peak > 0, "metrics.peak", "must be positive")
        ssim_window = int(met.get("ssim_window", 7))
        _require(ssim_window >= 1 and ssim_window % 2 == 1,
                 "metrics.ssim_window", "must be a positive odd integer")
        boundary_band = int(met.get("boundary_band", 1))
        _require(boundary_band >= 1, "metrics.boundary_band", "must be >= 1")

        return cls(
            raw=raw, shape=shape, sched=sched, plan=plan, codec=codec, model=model,
            condition=condition, guidance=guidance, init=init, mask_spec=mask_spec,
            pattern_spec=pattern_spec, noise_std=noise_std, solvers=solvers,
            trials=trials, seed=seed, peak=peak, ssim_window=ssim_window,
            boundary_band=boundary_band,
        )

    def build_measurement(self, trial: int):
        """Ground truth and measurement for one trial (deterministic in seed)."""
        # dedicated stream, disjoint from the per-trial trajectory seeds
        rng = make_rng((self.seed + trial) * 2 + 1_000_003)
        x_true = pattern_field(self.pattern_spec, self.shape, rng=rng, model=self.model,
                               key="measurement.pattern")
        if x_true.shape != self.shape:  # 'sample' pattern draws at latent shape
            x_true = decode(self.codec, x_true)
        mask = mask_field(self.mask_spec, self.shape)
        m = Measurement.from_truth(x_true, mask, self.codec, self.noise_std,
                                   rng if self.noise_std > 0 else None)
        return x_true, m


def _parse_init(d: dict, key: str) -> InitStrategy:
    kind = d.get("kind", "pure")
    _require(kind in INIT_KINDS, f"{key}.kind", f"unknown init kind {kind!r}")
    try:
        return InitStrategy(kind, float(d.get("offset_scale", 0.1)))
    except ValidationError as e:
        raise ConfigError(key, str(e)) from e


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"invalid JSON: {e}") from e
    return ExperimentConfig.from_dict(raw)
