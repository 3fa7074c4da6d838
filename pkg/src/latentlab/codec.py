"""Toy latent encoder/decoder pair with a controlled lossy mode.

The ``blockmean`` codec averages f x f pixel blocks into one latent cell and
decodes by block replication. That makes decode a right inverse of encode on
latent space (bit-exact for power-of-two factors) while encode-then-decode
deliberately discards within-block detail: the controlled analogue of the
high-frequency loss a trained autoencoder exhibits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .field import Field

__all__ = ["Codec", "encode", "decode"]

CODEC_KINDS = ("identity", "blockmean")


@dataclass(frozen=True)
class Codec:
    """kind: identity (exact) or blockmean (factor-f lossy downsampling).

    ``sigma_e`` documents the encoder reconstruction noise scale used by the
    data-consistency objective; the closed-form update never depends on it.
    """

    kind: str = "identity"
    factor: int = 2
    sigma_e: float = 0.05

    def __post_init__(self):
        if self.kind not in CODEC_KINDS:
            raise ValidationError(f"unknown codec kind {self.kind!r}, expected {CODEC_KINDS}")
        if self.kind == "blockmean" and self.factor < 1:
            raise ValidationError(f"blockmean factor must be >= 1, got {self.factor}")
        if self.sigma_e <= 0:
            raise ValidationError(f"sigma_e must positive, got {self.sigma_e}")

    def latent_shape(self, pixel_shape):
        c, h, w = pixel_shape
        if self.kind == "identity":
            return (c, h, w)
        self._check_divisible(h, w)
        return (c, h // self.factor, w // self.factor)

    def _check_divisible(self, h, w):
        f = self.factor
        if h % f or w % f:
            raise ValidationError(f"grid {h}x{w} not divisible by blockmean factor {f}")


def encode(c: Codec, x: Field) -> Field:
    """Pixel field -> latent field (per-block mean for blockmean)."""
    if c.kind == "identity":
        return x
    f = c.factor
    ch, h, w = x.shape
    c._check_divisible(h, w)
    blocks = x.data.reshape(ch, h // f, f, w // f, f)
    return Field(blocks.mean(axis=(2, 4)))


def decode(c: Codec, z: Field) -> Field:
    """Latent field -> pixel field (block replication for blockmean)."""
    if c.kind == "identity":
        return z
    f = c.factor
    return Field(np.repeat(np.repeat(z.data, f, axis=1), f, axis=2))
