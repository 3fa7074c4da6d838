"""Quantitative evaluation: PSNR, SSIM, boundary discontinuity, posterior error."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import distance_transform_edt, uniform_filter

from .errors import ShapeError, UndefinedMetricError, ValidationError
from .field import Field, _check_same_shape

__all__ = ["psnr", "ssim", "boundary_score", "posterior_error", "gradient_magnitude"]


def psnr(a: Field, b: Field, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs return +inf."""
    _check_same_shape(a, b)
    if peak <= 0:
        raise ValidationError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def ssim(a: Field, b: Field, window: int = 7, data_range: float = 1.0) -> float:
    """Mean local SSIM with k1=0.01, k2=0.03 over a uniform window.

    Local means and (co)variances come from a box filter of the given odd
    window size with reflective padding, averaged over all pixels and
    channels.
    """
    _check_same_shape(a, b)
    if window < 1 or window % 2 == 0:
        raise ValidationError(f"window must be a positive odd integer, got {window}")
    if data_range <= 0:
        raise ValidationError(f"data_range must be positive, got {data_range}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def box(x):
        return uniform_filter(x, size=(1, window, window), mode="reflect")

    x, y = a.data, b.data
    mu_x = box(x)
    mu_y = box(y)
    xx = box(x * x) - mu_x * mu_x
    yy = box(y * y) - mu_y * mu_y
    xy = box(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def gradient_magnitude(x: Field) -> Field:
    """Per-pixel finite-difference gradient magnitude, averaged over channels.

    Uses central differences in the interior and one-sided differences at the
    edges (numpy.gradient convention). Returns a single-channel field.
    """
    mags = []
    for ch in range(x.channels):
        gy, gx = np.gradient(x.data[ch])
        mags.append(np.hypot(gy, gx))
    return Field(np.mean(mags, axis=0)[np.newaxis])


def _interface_distance(mask2d: np.ndarray) -> np.ndarray:
    """Distance from each pixel to the nearest pixel of the other region."""
    inside = mask2d == 1.0
    d_to_outside = distance_transform_edt(inside)
    d_to_inside = distance_transform_edt(~inside)
    return np.where(inside, d_to_outside, d_to_inside)


def boundary_score(x: Field, mask: Field, band: int = 1) -> tuple[float, Field]:
    """Boundary-localized gradient excess and the full gradient heatmap.

    Mean gradient magnitude over pixels within ``band`` of the mask interface,
    minus the mean over an equal count of the deepest-interior pixels (ties
    broken by flat index). Positive values indicate discontinuity concentrated
    at the boundary. Invariant under adding a constant to ``x``.
    """
    if band < 1:
        raise ValidationError(f"band must be >= 1, got {band}")
    if mask.channels != 1:
        raise ValidationError(f"mask must be single-channel, got {mask.channels}")
    mk = mask.data[0]
    if not np.all((mk == 0.0) | (mk == 1.0)):
        raise ValidationError("mask values must be exactly 0 or 1")
    if (x.height, x.width) != mk.shape:
        raise ShapeError(f"image plane {x.data.shape[1:]} != mask plane {mk.shape}")
    if mk.all() or not mk.any():
        raise UndefinedMetricError("mask has no boundary; boundary score undefined")
    heat = gradient_magnitude(x)
    dist = _interface_distance(mk)
    band_sel = dist <= band
    n_band = int(band_sel.sum())
    flat_dist = dist.ravel()
    # deepest-interior reference band of equal area, deterministic tie-break
    order = np.argsort(-flat_dist, kind="stable")
    ref_idx = order[:n_band]
    hm = heat.data[0].ravel()
    score = float(hm[band_sel.ravel()].mean() - hm[ref_idx].mean())
    return score, heat


def posterior_error(samples, oracle_mean: Field, mask: Field) -> float:
    """RMS deviation of the sample mean from a reference over unmeasured pixels."""
    samples = list(samples)
    if not samples:
        raise ValidationError("need at least one sample")
    for s in samples:
        _check_same_shape(s, oracle_mean)
    mk = mask.data
    if mk.shape != oracle_mean.shape:
        # single-channel masks broadcast over the channels of the field
        if mk.shape[0] == 1 and mk.shape[1:] == oracle_mean.shape[1:]:
            mk = np.broadcast_to(mk, oracle_mean.shape)
        else:
            raise ShapeError(f"mask shape {mask.shape} incompatible with {oracle_mean.shape}")
    free = mk == 0.0
    if not free.any():
        return 0.0
    mean = np.mean([s.data for s in samples], axis=0)
    dev = (mean - oracle_mean.data)[free]
    return float(np.sqrt(np.mean(dev * dev)))
