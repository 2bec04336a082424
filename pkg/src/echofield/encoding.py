"""Integrated positional encoding of Gaussian footprints.

Sinusoidal features averaged under a Gaussian: for a coordinate with mean x
and variance v at band l, E[sin(2^l X)] = sin(2^l x) exp(-4^l v / 2) and
likewise for cosine.  Large footprints therefore suppress the frequencies
they cannot resolve, per axis.  Only the diagonal of the world covariance
drives the attenuation.

World positions are affinely normalized into [-pi, pi]^3 via a scene
bounding box before encoding; variances pick up the squared map
coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frustum import FrustumGaussian

__all__ = ["SceneBounds", "encode", "world_diag", "feature_length"]


def feature_length(num_bands: int) -> int:
    return 6 * num_bands


def encode(mean_point, diag_variance, num_bands: int) -> np.ndarray:
    """Expected sin/cos features of N(mean, diag_variance) per axis and band.

    Accepts a single point (shape (3,)) or a batch (shape (n, 3)); returns
    shape (6 * num_bands,) or (n, 6 * num_bands).  Layout: for each band l,
    sin features for the 3 axes then cos features for the 3 axes.
    """
    if num_bands < 1:
        raise ValueError("num_bands must be >= 1")
    x = np.atleast_2d(np.asarray(mean_point, dtype=np.float64))
    v = np.atleast_2d(np.asarray(diag_variance, dtype=np.float64))
    if np.any(v < 0):
        raise ValueError("variances must be nonnegative")

    freqs = 2.0 ** np.arange(num_bands)  # (L,)
    xs = x[:, None, :] * freqs[None, :, None]  # (n, L, 3)
    damp = np.exp(-0.5 * v[:, None, :] * freqs[None, :, None] ** 2)
    feats = np.concatenate([np.sin(xs) * damp, np.cos(xs) * damp], axis=2)
    out = feats.reshape(x.shape[0], 6 * num_bands)
    if np.asarray(mean_point).ndim == 1:
        return out[0]
    return out


def world_diag(gaussian: FrustumGaussian) -> np.ndarray:
    """Per-axis variances: the diagonal of the world-frame covariance."""
    return np.diag(gaussian.covariance).copy()


@dataclass(frozen=True)
class SceneBounds:
    """Axis-aligned box mapping world mm coordinates into [-pi, pi]^3."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounds must be 3-vectors")
        if np.any(hi <= lo):
            raise ValueError("need hi > lo on every axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def scale(self) -> np.ndarray:
        return 2.0 * np.pi / (self.hi - self.lo)

    def normalize(self, points, variances):
        """Map world points/variances into the encoding cube."""
        points = np.asarray(points, dtype=np.float64)
        variances = np.asarray(variances, dtype=np.float64)
        s = self.scale
        center = 0.5 * (self.lo + self.hi)
        return (points - center) * s, variances * s**2

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneBounds":
        return cls(np.array(d["lo"]), np.array(d["hi"]))


def encode_world(points, variances, bounds: SceneBounds, num_bands: int) -> np.ndarray:
    """Normalize into the scene cube, then apply the integrated encoding."""
    p, v = bounds.normalize(points, variances)
    return encode(p, v, num_bands)
