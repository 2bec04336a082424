"""Convex probe geometry: polar ray casting, slice frames, and SE(3) poses.

A convex (annular) transducer is described by an inner radius, outer radius,
and opening angle.  Scanlines diverge radially from the beam apex; within a
slice plane the local frame is ``(x, y) = (r sin(theta), r cos(theta) - r_in)``
so the probe face center sits at the local origin.  Slices are lifted into a
shared world frame by rigid poses.

All lengths are millimeters and all angles are radians internally; degrees
appear only at configuration boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ProbeSpec",
    "Pose",
    "Ray",
    "polar_to_cartesian",
    "cast_slice_rays",
    "stack_volume_rays",
    "elevational_step",
]

_ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid geometric input (out-of-range coordinate, bad pose, ...)."""


@dataclass(frozen=True)
class ProbeSpec:
    """Convex transducer parameterization.

    Attributes
    ----------
    r_in_mm, r_out_mm : inner/outer radius of the annular field of view.
    opening_angle_deg : fan opening angle in (0, 360].
    n_rays : scanlines per slice.
    n_samples : integration segments per scanline.
    s_lat_mm, s_dep_mm : in-plane (lateral) and cross-plane (elevational)
        resolution, which set the Gaussian footprint base radii.
    n_slices : fan slices stacked per acquired volume.
    """

    r_in_mm: float
    r_out_mm: float
    opening_angle_deg: float
    n_rays: int
    n_samples: int
    s_lat_mm: float
    s_dep_mm: float
    n_slices: int = 1

    def __post_init__(self):
        if not 0 <= self.r_in_mm < self.r_out_mm:
            raise GeometryError(
                f"need 0 <= r_in_mm < r_out_mm, got {self.r_in_mm}, {self.r_out_mm}"
            )
        if not 0 < self.opening_angle_deg <= 360:
            raise GeometryError(
                f"opening_angle_deg must be in (0, 360], got {self.opening_angle_deg}"
            )
        if self.n_rays < 2:
            raise GeometryError(f"n_rays must be >= 2, got {self.n_rays}")
        if self.n_samples < 1:
            raise GeometryError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.n_slices < 1:
            raise GeometryError(f"n_slices must be >= 1, got {self.n_slices}")
        if self.s_lat_mm <= 0 or self.s_dep_mm <= 0:
            raise GeometryError("resolutions s_lat_mm, s_dep_mm must be > 0")

    @property
    def opening_angle_rad(self) -> float:
        return float(np.deg2rad(self.opening_angle_deg))

    @property
    def full_circle(self) -> bool:
        return self.opening_angle_deg >= 360.0

    def ray_angles(self) -> np.ndarray:
        """Uniform scanline angles over the opening angle.

        For a full 360-degree annulus the seam ray is not duplicated:
        ``theta_k = -pi + 2 pi k / n``.  Otherwise both fan edges are
        included with spacing ``Theta / (n - 1)``.
        """
        half = self.opening_angle_rad / 2.0
        if self.full_circle:
            return -np.pi + 2.0 * np.pi * np.arange(self.n_rays) / self.n_rays
        return np.linspace(-half, half, self.n_rays)

    def to_dict(self) -> dict:
        return {
            "r_in_mm": self.r_in_mm,
            "r_out_mm": self.r_out_mm,
            "opening_angle_deg": self.opening_angle_deg,
            "n_rays": self.n_rays,
            "n_samples": self.n_samples,
            "s_lat_mm": self.s_lat_mm,
            "s_dep_mm": self.s_dep_mm,
            "n_slices": self.n_slices,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeSpec":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    @classmethod
    def load(cls, path) -> "ProbeSpec":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class Pose:
    """Rigid SE(3) transform placing a slice plane in world coordinates (mm)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError(f"pose matrix must be 4x4, got {m.shape}")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise GeometryError("pose rotation block is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise GeometryError("pose rotation block must have det +1")
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 0:
            raise GeometryError("pose last row must be (0, 0, 0, 1)")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation: np.ndarray, translation) -> "Pose":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_translation(cls, translation) -> "Pose":
        return cls.from_rotation_translation(np.eye(3), translation)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def transform_direction(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        return d @ self.rotation.T

    def inverse(self) -> "Pose":
        r = self.rotation.T
        return Pose.from_rotation_translation(r, -r @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self @ other) p = self(other(p))."""
        return Pose(self.matrix @ other.matrix)


@dataclass(frozen=True)
class Ray:
    """A scanline with its orthonormal resolution frame.

    ``direction`` points along the beam, ``lateral_axis`` is the in-plane
    tangent, ``depth_axis`` is the slice normal (elevational direction).
    The parameter t runs over [t_min, t_max] measured from the probe face,
    so t_min = 0 and t_max = r_out - r_in.
    """

    origin: np.ndarray
    direction: np.ndarray
    lateral_axis: np.ndarray
    depth_axis: np.ndarray
    t_min: float
    t_max: float

    def __post_init__(self):
        for name in ("origin", "direction", "lateral_axis", "depth_axis"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        d, v1, v2 = self.direction, self.lateral_axis, self.depth_axis
        for v, name in ((d, "direction"), (v1, "lateral_axis"), (v2, "depth_axis")):
            if abs(np.linalg.norm(v) - 1.0) > _ORTHO_TOL:
                raise GeometryError(f"ray {name} is not unit length")
        if (
            abs(d @ v1) > _ORTHO_TOL
            or abs(d @ v2) > _ORTHO_TOL
            or abs(v1 @ v2) > _ORTHO_TOL
        ):
            raise GeometryError("ray frame is not orthogonal")
        if self.t_max <= self.t_min:
            raise GeometryError("ray needs t_max > t_min")

    @property
    def frame(self) -> np.ndarray:
        """Column basis [d, v1, v2], orthonormal by construction."""
        return np.stack(
            [self.direction, self.lateral_axis, self.depth_axis], axis=1
        )

    def point_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.origin + np.multiply.outer(t, self.direction)


def polar_to_cartesian(r, theta, z, probe: ProbeSpec) -> np.ndarray:
    """Map fan coordinates (r, theta, z) to the slice-local Cartesian frame.

    Returns ``(r sin(theta), r cos(theta) - r_in, z)``.  r must lie inside
    the annulus and theta inside the fan opening.
    """
    if not probe.r_in_mm <= r <= probe.r_out_mm:
        raise GeometryError(
            f"r={r} outside annulus [{probe.r_in_mm}, {probe.r_out_mm}]"
        )
    half = probe.opening_angle_rad / 2.0
    if abs(theta) > half + 1e-12:
        raise GeometryError(f"theta={theta} outside fan half-angle {half}")
    return np.array(
        [r * np.sin(theta), r * np.cos(theta) - probe.r_in_mm, z]
    )


def cast_slice_rays(probe: ProbeSpec, pose: Pose) -> list[Ray]:
    """Cast one slice's scanlines, lifted into world coordinates by ``pose``.

    Scanline k points radially outward at angle theta_k; its origin is the
    world image of the probe-face point (r_in, theta_k, 0).  The frame is
    right-handed: direction x lateral = depth (anti-normal of the slice).
    """
    angles = probe.ray_angles()
    sin_t, cos_t = np.sin(angles), np.cos(angles)
    span = probe.r_out_mm - probe.r_in_mm

    rays = []
    for s, c in zip(sin_t, cos_t):
        # local: radial direction (s, c, 0); lateral = normalized d/dtheta
        # tangent (c, -s, 0); depth = d x v1 = (0, 0, -1) keeps the triple
        # right-handed (sign is irrelevant to the quadratic covariance).
        origin = pose.transform_point(
            np.array([probe.r_in_mm * s, probe.r_in_mm * c - probe.r_in_mm, 0.0])
        )
        d = pose.transform_direction(np.array([s, c, 0.0]))
        v1 = pose.transform_direction(np.array([c, -s, 0.0]))
        v2 = pose.transform_direction(np.array([0.0, 0.0, -1.0]))
        rays.append(
            Ray(origin=origin, direction=d, lateral_axis=v1, depth_axis=v2,
                t_min=0.0, t_max=span)
        )
    return rays


def stack_volume_rays(probe: ProbeSpec, slice_poses: list[Pose]) -> list[list[Ray]]:
    """Rays for a stacked multi-planar volume, grouped by slice in order."""
    if len(slice_poses) != probe.n_slices:
        raise GeometryError(
            f"expected {probe.n_slices} slice poses, got {len(slice_poses)}"
        )
    return [cast_slice_rays(probe, pose) for pose in slice_poses]


def elevational_step(slice_poses: list[Pose]) -> list[float]:
    """Translational displacement between adjacent slice-plane origins (mm).

    Rotational components of the inter-slice motion are deliberately
    ignored; pull-back sweeps are translation-dominated.
    """
    if len(slice_poses) < 2:
        raise GeometryError("elevational step needs at least 2 poses")
    origins = np.array([p.translation for p in slice_poses])
    return [float(np.linalg.norm(d)) for d in np.diff(origins, axis=0)]


def load_poses(path) -> list[Pose]:
    """Read a pose file: JSON {"poses": [[16 numbers row-major], ...]}."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    return [Pose(np.array(row, dtype=np.float64).reshape(4, 4)) for row in doc["poses"]]


def save_poses(poses: list[Pose], path) -> None:
    doc = {"poses": [p.matrix.reshape(-1).tolist() for p in poses]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
