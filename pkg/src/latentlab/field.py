"""Dense C x H x W grids, per-channel 2-D DFTs, and radial frequency masks.

A :class:`Field` is the universal carrier for images, latents, masks and noise
throughout the package: a stack of ``channels`` real-valued ``height x width``
planes stored row-major in float64. Construction validates finiteness, so any
value produced by the public operations is guaranteed NaN/Inf-free.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ShapeError, ValidationError

__all__ = [
    "Field",
    "SpectralField",
    "elementwise_blend",
    "dft2",
    "idft2",
    "radial_split",
    "save_field_dump",
    "load_field_dump",
    "write_pgm",
    "write_ppm",
]

_DUMP_MAGIC = 0x464C4430  # "FLD0" little-endian


class Field:
    """Immutable real-valued grid of shape (channels, height, width), float64."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[np.newaxis, :, :]
        if arr.ndim != 3:
            raise ValidationError(f"field data must be 2-D or 3-D, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ValidationError(f"field dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("field contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "Field":
        return cls(np.zeros((channels, height, width)))

    @classmethod
    def full(cls, channels: int, height: int, width: int, value: float) -> "Field":
        return cls(np.full((channels, height, width), float(value)))

    def __repr__(self):
        c, h, w = self.shape
        return f"Field({c}x{h}x{w})"

    # Elementwise arithmetic returns new validated Fields.
    def __add__(self, other):
        return Field(self.data + _raw(other))

    def __radd__(self, other):
        return Field(_raw(other) + self.data)

    def __sub__(self, other):
        return Field(self.data - _raw(other))

    def __rsub__(self, other):
        return Field(_raw(other) - self.data)

    def __mul__(self, other):
        return Field(self.data * _raw(other))

    def __rmul__(self, other):
        return Field(_raw(other) * self.data)

    def __truediv__(self, other):
        return Field(self.data / _raw(other))

    def __neg__(self):
        return Field(-self.data)


def _raw(x):
    return x.data if isinstance(x, Field) else x


class SpectralField:
    """Complex coefficients of the unshifted per-channel 2-D DFT of a Field."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.complex128, copy=True)
        if arr.ndim != 3:
            raise ValidationError(f"spectral data must be 3-D, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("spectrum contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("SpectralField is immutable")

    @property
    def shape(self):
        return self.data.shape


def _check_same_shape(*fields: Field):
    shapes = {f.shape for f in fields}
    if len(shapes) > 1:
        raise ShapeError(f"fields have mismatched shapes: {sorted(shapes)}")


def elementwise_blend(mask: Field, a: Field, b: Field) -> Field:
    """Return ``mask*a + (1-mask)*b`` elementwise; mask values must be 0 or 1.

    Implemented with ``np.where`` so the output is bit-exact in both regions,
    which the arithmetic form only guarantees up to rounding.
    """
    _check_same_shape(mask, a, b)
    m = mask.data
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValidationError("blend mask values must be exactly 0 or 1")
    return Field(np.where(m == 1.0, a.data, b.data))


def dft2(f: Field) -> SpectralField:
    """Unnormalized forward 2-D DFT of each channel plane."""
    return SpectralField(np.fft.fft2(f.data, axes=(-2, -1)))


def idft2(s: SpectralField) -> Field:
    """Normalized inverse 2-D DFT per channel; the imaginary residue is dropped.

    For spectra of real fields (possibly masked by an index-symmetric filter)
    the residue is at rounding level, so the round trip is an identity to
    better than 1e-10.
    """
    return Field(np.real(np.fft.ifft2(s.data, axes=(-2, -1))))


def radial_frequency_mask(height: int, width: int, cutoff: float) -> np.ndarray:
    """Boolean low-pass mask in unshifted DFT index space.

    A coefficient at signed index (ky, kx) is "low" when
    sqrt(ky^2 + kx^2) <= cutoff * r_max, where r_max = sqrt((H//2)^2 + (W//2)^2)
    is the corner (Nyquist) radius. cutoff=0 keeps only DC, cutoff=1 keeps all.
    The mask is symmetric under index negation, so masking preserves the
    conjugate symmetry of real-field spectra.
    """
    if not (0.0 <= cutoff <= 1.0):
        raise ValidationError(f"cutoff must lie in [0, 1], got {cutoff}")
    ky = np.fft.fftfreq(height, d=1.0 / height)
    kx = np.fft.fftfreq(width, d=1.0 / width)
    r = np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    r_max = np.sqrt((height // 2) ** 2 + (width // 2) ** 2)
    return r <= cutoff * r_max


def radial_split(f: Field, cutoff: float) -> tuple[Field, Field]:
    """Split a field into (low, high) parts about a radial DFT cutoff.

    ``low`` is the inverse transform of the coefficients inside the radial
    cutoff; ``high = f - low``, so the two parts always sum back to ``f``
    exactly.
    """
    mask = radial_frequency_mask(f.height, f.width, cutoff)
    spec = np.fft.fft2(f.data, axes=(-2, -1))
    low = Field(np.real(np.fft.ifft2(spec * mask, axes=(-2, -1))))
    high = f - low
    return low, high


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_field_dump(path, f: Field) -> None:
    """Write a raw little-endian float64 dump with a 16-byte header.

    Header: magic, channels, height, width as little-endian uint32. Data
    follows in row-major channel-plane order. Bit-exact round trip.
    """
    header = struct.pack("<IIII", _DUMP_MAGIC, f.channels, f.height, f.width)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f.data.astype("<f8").tobytes(order="C"))


def load_field_dump(path) -> Field:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise ValidationError(f"{path}: truncated header")
        magic, c, h, w = struct.unpack("<IIII", header)
        if magic != _DUMP_MAGIC:
            raise ValidationError(f"{path}: bad magic 0x{magic:08X}")
        raw = fh.read(8 * c * h * w)
    if len(raw) != 8 * c * h * w:
        raise ValidationError(f"{path}: truncated data")
    data = np.frombuffer(raw, dtype="<f8").reshape(c, h, w)
    return Field(data)


def _quantize(plane: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    if not vmax > vmin:
        raise ValidationError(f"require vmax > vmin, got [{vmin}, {vmax}]")
    scaled = (plane - vmin) / (vmax - vmin) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def write_pgm(path, f: Field, vmin: float, vmax: float) -> None:
    """Write a single-channel field as binary 8-bit PGM (P5)."""
    if f.channels != 1:
        raise ValidationError(f"PGM requires 1 channel, got {f.channels}")
    img = _quantize(f.data[0], vmin, vmax)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{f.width} {f.height}\n255\n".encode("ascii"))
        fh.write(img.tobytes(order="C"))


def write_ppm(path, f: Field, vmin: float, vmax: float) -> None:
    """Write a three-channel field as binary 8-bit PPM (P6)."""
    if f.channels != 3:
        raise ValidationError(f"PPM requires 3 channels, got {f.channels}")
    img = _quantize(f.data, vmin, vmax)  # (3, H, W)
    interleaved = np.ascontiguousarray(np.moveaxis(img, 0, -1))  # (H, W, 3)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{f.width} {f.height}\n255\n".encode("ascii"))
        fh.write(interleaved.tobytes(order="C"))
