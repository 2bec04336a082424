"""Anisotropic Gaussian moments of diverging-beam cone frustums.

Each ray segment [t0, t1] of a diverging beam is approximated by a 3D
Gaussian whose axial moments match a uniform density over the elliptical
cone frustum (apex at the beam origin, cross-section semi-axes growing
linearly with distance).  The lateral and elevational footprints carry
independent base radii derived from the probe resolutions, making the
Gaussian anisotropic across the three resolution axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Ray

__all__ = [
    "SegmentBounds",
    "GaussianRadii",
    "FrustumGaussian",
    "base_radii",
    "mean_distance",
    "ray_variance",
    "perpendicular_variance",
    "build_covariance",
]

# Lower bound on the 3*mu^2 + delta^2 denominator; valid segments are
# never anywhere near it.
_DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class SegmentBounds:
    """One ray segment [t0, t1], distances measured from the beam apex."""

    t0: float
    t1: float

    def __post_init__(self):
        if self.t1 <= self.t0:
            raise ValueError(f"segment needs t1 > t0, got [{self.t0}, {self.t1}]")
        if self.mu <= 0:
            raise ValueError("segment midpoint must be > 0 (apex-relative)")

    @property
    def mu(self) -> float:
        return 0.5 * (self.t0 + self.t1)

    @property
    def delta(self) -> float:
        return 0.5 * (self.t1 - self.t0)


@dataclass(frozen=True)
class GaussianRadii:
    """Dimensionless footprint growth slopes for the two perpendicular axes."""

    r_lat: float
    r_dep: float

    def __post_init__(self):
        if self.r_lat <= 0 or self.r_dep <= 0:
            raise ValueError("Gaussian base radii must be > 0")


@dataclass(frozen=True)
class FrustumGaussian:
    """Gaussian footprint of one frustum: world mean, covariance, ray frame."""

    mean_point: np.ndarray
    covariance: np.ndarray
    frame: np.ndarray
    variances: tuple[float, float, float]  # (ray, lateral, depth)


def base_radii(s_lat_mm: float, s_dep_mm: float) -> GaussianRadii:
    """Footprint slopes from resolutions: r = 2 s / sqrt(12) per axis."""
    if s_lat_mm <= 0 or s_dep_mm <= 0:
        raise ValueError("resolutions must be > 0")
    k = 2.0 / np.sqrt(12.0)
    return GaussianRadii(r_lat=k * s_lat_mm, r_dep=k * s_dep_mm)


def _moments(mu, delta):
    """(mean, axial variance) of the cone-weighted segment density."""
    mu = np.asarray(mu, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    denom = np.maximum(3.0 * mu**2 + delta**2, _DENOM_FLOOR)
    mean = mu + 2.0 * mu * delta**2 / denom
    var = delta**2 / 3.0 - (4.0 / 15.0) * delta**4 * (12.0 * mu**2 - delta**2) / denom**2
    return mean, var


def mean_distance(seg: SegmentBounds) -> float:
    """Cone-weighted mean distance along the ray; always >= the midpoint."""
    return float(_moments(seg.mu, seg.delta)[0])


def ray_variance(seg: SegmentBounds) -> float:
    """Along-ray variance of the frustum density, in (0, delta^2/3]."""
    return float(_moments(seg.mu, seg.delta)[1])


def perpendicular_variance(seg: SegmentBounds, r_axis: float) -> float:
    """Perpendicular variance for an axis with footprint slope ``r_axis``.

    Scales exactly with r_axis^2; the bracket is the second radial moment
    of the uniform frustum density.
    """
    if r_axis <= 0:
        raise ValueError("r_axis must be > 0")
    mu, delta = seg.mu, seg.delta
    denom = max(3.0 * mu**2 + delta**2, _DENOM_FLOOR)
    bracket = mu**2 / 4.0 + 5.0 * delta**2 / 12.0 - 4.0 * delta**4 / (15.0 * denom)
    return float(r_axis**2 * bracket)


def build_covariance(seg: SegmentBounds, radii: GaussianRadii, ray: Ray) -> FrustumGaussian:
    """Assemble the world-frame Gaussian of a frustum on ``ray``.

    The mean sits at origin + mean_distance * direction (segment distances
    and the ray origin must share the same reference point, i.e. the beam
    apex).  The covariance is diag(ray, lateral, depth) conjugated by the
    ray frame.
    """
    b = ray.frame
    if np.max(np.abs(b.T @ b - np.eye(3))) > 1e-9:
        raise ValueError("ray frame is not orthonormal")
    s_ray = ray_variance(seg)
    s_lat = perpendicular_variance(seg, radii.r_lat)
    s_dep = perpendicular_variance(seg, radii.r_dep)
    cov = (b * np.array([s_ray, s_lat, s_dep])) @ b.T
    cov = 0.5 * (cov + cov.T)
    mean = ray.origin + mean_distance(seg) * ray.direction
    return FrustumGaussian(
        mean_point=mean,
        covariance=cov,
        frame=b,
        variances=(s_ray, s_lat, s_dep),
    )


def segment_moments_batch(t_edges: np.ndarray):
    """Vectorized mean/variance table for consecutive segment edges.

    ``t_edges`` is a 1D array of n+1 apex-relative distances; returns
    (mu_t, sigma2_ray) arrays of length n.  Used by the renderer's hot path.
    """
    t0, t1 = t_edges[:-1], t_edges[1:]
    mu = 0.5 * (t0 + t1)
    delta = 0.5 * (t1 - t0)
    return _moments(mu, delta)


def perpendicular_variance_batch(t_edges: np.ndarray, r_axis: float) -> np.ndarray:
    """Vectorized perpendicular variances for consecutive segment edges."""
    t0, t1 = t_edges[:-1], t_edges[1:]
    mu = 0.5 * (t0 + t1)
    delta = 0.5 * (t1 - t0)
    denom = np.maximum(3.0 * mu**2 + delta**2, _DENOM_FLOOR)
    bracket = mu**2 / 4.0 + 5.0 * delta**2 / 12.0 - 4.0 * delta**4 / (15.0 * denom)
    return r_axis**2 * bracket
