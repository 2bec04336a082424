"""Acoustic forward rendering and scan conversion.

Rays accumulate Beer-Lambert transmission over attenuation and emit
backscatter per segment; fan-grid intensities are then resampled onto a
Cartesian voxel grid (scan conversion) so that volumetric losses compare
like with like.  A panorama stacks virtual slice planes interpolated along
the whole acquisition trajectory, all querying one continuous field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from . import field as nf
from .encoding import SceneBounds, encode_world
from .frustum import (
    GaussianRadii,
    perpendicular_variance_batch,
    segment_moments_batch,
)
from .geometry import Pose, ProbeSpec, Ray

__all__ = [
    "FanImage",
    "VolumeGrid",
    "ScanConverter",
    "beer_lambert",
    "slice_sample_geometry",
    "render_ray",
    "render_slice",
    "render_volume",
    "render_panorama",
    "interpolate_trajectory",
]


@dataclass
class FanImage:
    """Per-slice intensities on the (ray, sample) polar grid, values in [0,1]."""

    intensities: np.ndarray  # (n_rays, n_samples)
    probe: ProbeSpec
    pose: Pose


@dataclass
class VolumeGrid:
    """Dense scalar voxel grid with a fan-coverage mask.

    ``data`` and ``fan_mask`` are indexed [z, y, x] (shape (D, H, W)) so a
    C-order ravel is x-fastest.  ``dims`` reports (W, H, D).  Spacing is
    isotropic, in mm.  Masked-out voxels hold 0.
    """

    data: np.ndarray
    fan_mask: np.ndarray
    spacing_mm: float

    def __post_init__(self):
        if self.data.shape != self.fan_mask.shape:
            raise ValueError("data and fan_mask shapes differ")
        if self.data.ndim != 3:
            raise ValueError("volume must be 3D")

    @property
    def dims(self) -> tuple[int, int, int]:
        d, h, w = self.data.shape
        return (w, h, d)

    def copy(self) -> "VolumeGrid":
        return VolumeGrid(self.data.copy(), self.fan_mask.copy(), self.spacing_mm)


def beer_lambert(alpha: np.ndarray, backscatter: np.ndarray, delta_mm: float) -> np.ndarray:
    """Intensities I_j = T_j b_j with T_j = exp(-sum_{k<j} alpha_k delta).

    ``alpha`` and ``backscatter`` have the sample axis last; T_0 = 1.  This
    single integrator is shared by the neural renderer and the phantom
    simulator so both paths agree bitwise.
    """
    atten = alpha * delta_mm
    cum = np.cumsum(atten, axis=-1)
    cum = np.concatenate([np.zeros_like(cum[..., :1]), cum[..., :-1]], axis=-1)
    return np.exp(-cum) * backscatter


def beer_lambert_backward(alpha, backscatter, delta_mm, d_intensity):
    """Gradients of a scalar loss w.r.t. (alpha, backscatter).

    d L/d b_j = g_j T_j; d L/d alpha_k = -delta * sum_{j>k} g_j I_j.
    """
    atten = alpha * delta_mm
    cum = np.cumsum(atten, axis=-1)
    cum = np.concatenate([np.zeros_like(cum[..., :1]), cum[..., :-1]], axis=-1)
    trans = np.exp(-cum)
    intensity = trans * backscatter
    d_b = d_intensity * trans
    gi = d_intensity * intensity
    # suffix sum excluding the element itself
    suffix = np.flip(np.cumsum(np.flip(gi, axis=-1), axis=-1), axis=-1)
    suffix = np.concatenate([suffix[..., 1:], np.zeros_like(suffix[..., :1])], axis=-1)
    d_alpha = -delta_mm * suffix
    return d_alpha, d_b


def _radial_edges(probe: ProbeSpec) -> np.ndarray:
    """Segment edges in apex distance: uniform over [r_in, r_out]."""
    return np.linspace(probe.r_in_mm, probe.r_out_mm, probe.n_samples + 1)


def segment_length_mm(probe: ProbeSpec) -> float:
    return (probe.r_out_mm - probe.r_in_mm) / probe.n_samples


def slice_sample_geometry(probe: ProbeSpec, pose: Pose, radii: GaussianRadii,
                          point_sampling: bool = False):
    """Sample means and world-diagonal variances for one slice.

    Returns (positions, diag_vars), each (n_rays, n_samples, 3).  Frustum
    moments are evaluated apex-relative, so the diverging footprint grows
    with range.  ``point_sampling`` zeroes the variances (samples stay at
    the frustum means, making the two modes differ only in encoding).
    """
    edges = _radial_edges(probe)
    mu_t, var_ray = segment_moments_batch(edges)
    var_lat = perpendicular_variance_batch(edges, radii.r_lat)
    var_dep = perpendicular_variance_batch(edges, radii.r_dep)

    angles = probe.ray_angles()
    sin_t, cos_t = np.sin(angles), np.cos(angles)
    # local frames per ray: d=(s,c,0), v1=(c,-s,0), v2=(0,0,-1)
    d_loc = np.stack([sin_t, cos_t, np.zeros_like(sin_t)], axis=1)
    v1_loc = np.stack([cos_t, -sin_t, np.zeros_like(sin_t)], axis=1)
    v2_loc = np.broadcast_to(np.array([0.0, 0.0, -1.0]), d_loc.shape)

    rot = pose.rotation
    d = d_loc @ rot.T
    v1 = v1_loc @ rot.T
    v2 = v2_loc @ rot.T
    apex = pose.transform_point(np.array([0.0, -probe.r_in_mm, 0.0]))

    positions = apex + d[:, None, :] * mu_t[None, :, None]
    if point_sampling:
        diag = np.zeros_like(positions)
    else:
        diag = (
            d[:, None, :] ** 2 * var_ray[None, :, None]
            + v1[:, None, :] ** 2 * var_lat[None, :, None]
            + v2[:, None, :] ** 2 * var_dep[None, :, None]
        )
    return positions, diag


def render_ray(params: nf.FieldParams, ray: Ray, probe: ProbeSpec,
               radii: GaussianRadii, bounds: SceneBounds,
               num_bands: int | None = None,
               point_sampling: bool = False) -> np.ndarray:
    """Render one scanline to its n_samples intensities."""
    num_bands = num_bands if num_bands is not None else params.config.num_bands
    edges = _radial_edges(probe)
    mu_t, var_ray = segment_moments_batch(edges)
    var_lat = perpendicular_variance_batch(edges, radii.r_lat)
    var_dep = perpendicular_variance_batch(edges, radii.r_dep)

    apex = ray.origin - probe.r_in_mm * ray.direction
    positions = apex + np.outer(mu_t, ray.direction)
    if point_sampling:
        diag = np.zeros_like(positions)
    else:
        diag = (
            np.outer(var_ray, ray.direction**2)
            + np.outer(var_lat, ray.lateral_axis**2)
            + np.outer(var_dep, ray.depth_axis**2)
        )
    feats = encode_world(positions, diag, bounds, num_bands)
    alpha, b = nf.forward(params, feats)
    return beer_lambert(alpha, b, segment_length_mm(probe))


def midpoint_sample_positions(probe: ProbeSpec, pose: Pose) -> np.ndarray:
    """Geometric segment-midpoint positions, (n_rays, n_samples, 3).

    Used for footprint-free field functions (the phantom ground truth):
    the world itself has no sampling footprint, so midpoints rather than
    cone-weighted means are the right query points.
    """
    edges = _radial_edges(probe)
    r_mid = 0.5 * (edges[:-1] + edges[1:])
    angles = probe.ray_angles()
    d_loc = np.stack([np.sin(angles), np.cos(angles), np.zeros_like(angles)], axis=1)
    d = d_loc @ pose.rotation.T
    apex = pose.transform_point(np.array([0.0, -probe.r_in_mm, 0.0]))
    return apex + d[:, None, :] * r_mid[None, :, None]


def render_slice(params: nf.FieldParams | None, probe: ProbeSpec, pose: Pose,
                 radii: GaussianRadii | None, bounds: SceneBounds | None,
                 point_sampling: bool = False,
                 field_fn=None) -> FanImage:
    """Render one fan slice as an (n_rays, n_samples) intensity grid.

    Normally queries the neural field through the integrated encoding.
    With ``field_fn`` (positions (n, 3) -> (alpha, backscatter)) the slice
    is instead rendered from a direct acoustic-value function sampled at
    segment midpoints; the phantom simulator runs through this exact path.
    """
    if field_fn is not None:
        positions = midpoint_sample_positions(probe, pose)
        alpha, b = field_fn(positions.reshape(-1, 3))
    else:
        positions, diag = slice_sample_geometry(probe, pose, radii, point_sampling)
        feats = encode_world(positions.reshape(-1, 3), diag.reshape(-1, 3),
                             bounds, params.config.num_bands)
        alpha, b = nf.forward(params, feats)
    shape = positions.shape[:2]
    intensities = beer_lambert(alpha.reshape(shape), b.reshape(shape),
                               segment_length_mm(probe))
    return FanImage(intensities=intensities, probe=probe, pose=pose)


class ScanConverter:
    """Precomputed bilinear resampling from the fan grid to a Cartesian plane.

    The plane is W x H voxels at isotropic spacing, centered on the beam
    apex.  Voxel centers inside the annulus (and fan wedge, when the
    opening angle is under 360 degrees) are bilinearly interpolated in
    (theta, r); everything else is masked out and set to 0.  The same
    index/weight table also gives the exact adjoint for backpropagation.
    """

    def __init__(self, probe: ProbeSpec, width: int, height: int, spacing_mm: float):
        self.probe = probe
        self.width = width
        self.height = height
        self.spacing_mm = spacing_mm

        i = np.arange(width)
        j = np.arange(height)
        x = (i - (width - 1) / 2.0) * spacing_mm
        y = (j - (height - 1) / 2.0) * spacing_mm
        xx, yy = np.meshgrid(x, y)  # (H, W), apex-centered
        r = np.hypot(xx, yy)
        theta = np.arctan2(xx, yy)

        mask = (r >= probe.r_in_mm) & (r <= probe.r_out_mm)
        if not probe.full_circle:
            mask &= np.abs(theta) <= probe.opening_angle_rad / 2.0
        self.mask = mask

        rm = r[mask]
        tm = theta[mask]

        dr = segment_length_mm(probe)
        fr = (rm - (probe.r_in_mm + dr / 2.0)) / dr
        fr = np.clip(fr, 0.0, probe.n_samples - 1.0)
        r0 = np.floor(fr).astype(np.intp)
        r0 = np.minimum(r0, probe.n_samples - 2) if probe.n_samples > 1 else r0
        wr = fr - r0 if probe.n_samples > 1 else np.zeros_like(fr)
        r1 = np.minimum(r0 + 1, probe.n_samples - 1)

        n = probe.n_rays
        if probe.full_circle:
            pitch = 2.0 * np.pi / n
            ft = (tm + np.pi) / pitch
            t0 = np.floor(ft).astype(np.intp) % n
            wt = ft - np.floor(ft)
            t1 = (t0 + 1) % n
        else:
            half = probe.opening_angle_rad / 2.0
            pitch = probe.opening_angle_rad / (n - 1)
            ft = np.clip((tm + half) / pitch, 0.0, n - 1.0)
            t0 = np.floor(ft).astype(np.intp)
            t0 = np.minimum(t0, n - 2)
            wt = ft - t0
            t1 = t0 + 1

        self._t0, self._t1, self._r0, self._r1 = t0, t1, r0, r1
        self._w00 = (1 - wt) * (1 - wr)
        self._w01 = (1 - wt) * wr
        self._w10 = wt * (1 - wr)
        self._w11 = wt * wr

    def convert(self, fan_values: np.ndarray) -> np.ndarray:
        """Resample an (n_rays, n_samples) fan grid to an (H, W) plane."""
        out = np.zeros((self.height, self.width), dtype=fan_values.dtype)
        vals = (
            self._w00 * fan_values[self._t0, self._r0]
            + self._w01 * fan_values[self._t0, self._r1]
            + self._w10 * fan_values[self._t1, self._r0]
            + self._w11 * fan_values[self._t1, self._r1]
        )
        out[self.mask] = vals
        return out

    def adjoint(self, plane_grad: np.ndarray) -> np.ndarray:
        """Transpose of ``convert``: scatter plane gradients to the fan grid."""
        g = plane_grad[self.mask]
        fan_grad = np.zeros((self.probe.n_rays, self.probe.n_samples),
                            dtype=plane_grad.dtype)
        np.add.at(fan_grad, (self._t0, self._r0), self._w00 * g)
        np.add.at(fan_grad, (self._t0, self._r1), self._w01 * g)
        np.add.at(fan_grad, (self._t1, self._r0), self._w10 * g)
        np.add.at(fan_grad, (self._t1, self._r1), self._w11 * g)
        return fan_grad


def scan_convert(fan: FanImage, target_dims: tuple[int, int], spacing_mm: float,
                 converter: ScanConverter | None = None) -> VolumeGrid:
    """Scan-convert one fan image to a single-plane Cartesian VolumeGrid."""
    w, h = target_dims
    conv = converter or ScanConverter(fan.probe, w, h, spacing_mm)
    plane = conv.convert(fan.intensities)
    return VolumeGrid(
        data=plane[None, :, :],
        fan_mask=np.broadcast_to(conv.mask, (1, h, w)).copy(),
        spacing_mm=spacing_mm,
    )


def render_volume(params: nf.FieldParams | None, probe: ProbeSpec,
                  slice_poses: list[Pose], radii: GaussianRadii | None,
                  bounds: SceneBounds | None, target_dims: tuple[int, int],
                  spacing_mm: float, point_sampling: bool = False,
                  field_fn=None) -> VolumeGrid:
    """Render and scan-convert a stack of slices into one Cartesian volume."""
    w, h = target_dims
    conv = ScanConverter(probe, w, h, spacing_mm)
    planes = []
    for pose in slice_poses:
        fan = render_slice(params, probe, pose, radii, bounds, point_sampling,
                           field_fn=field_fn)
        planes.append(conv.convert(fan.intensities))
    data = np.stack(planes, axis=0)
    mask = np.broadcast_to(conv.mask, data.shape).copy()
    return VolumeGrid(data=data, fan_mask=mask, spacing_mm=spacing_mm)


def interpolate_trajectory(trajectory_poses: list[Pose], n_planes: int) -> list[Pose]:
    """Uniform virtual slice poses along a piecewise trajectory.

    Translation is interpolated linearly and rotation spherically, with
    the curve parameterized by cumulative translational arc length.  Plane
    i sits at parameter i / n_planes (half-open), so the pitch equals
    span / n_planes for a straight pull-back.
    """
    if len(trajectory_poses) < 2:
        raise ValueError("trajectory needs at least 2 poses")
    trans = np.array([p.translation for p in trajectory_poses])
    seglen = np.linalg.norm(np.diff(trans, axis=0), axis=1)
    total = float(seglen.sum())
    if total <= 1e-12:
        raise ValueError("degenerate trajectory: all poses coincide")
    knots = np.concatenate([[0.0], np.cumsum(seglen)])
    # collapse zero-length segments for the rotation interpolator
    keep = np.concatenate([[True], seglen > 1e-12])
    k_knots = knots[keep]
    k_rots = Rotation.from_matrix(np.array([p.rotation for p in trajectory_poses])[keep])
    slerp = Slerp(k_knots, k_rots)

    out = []
    for i in range(n_planes):
        s = total * i / n_planes
        seg = np.clip(np.searchsorted(knots, s, side="right") - 1, 0, len(seglen) - 1)
        local = (s - knots[seg]) / seglen[seg] if seglen[seg] > 0 else 0.0
        t = (1 - local) * trans[seg] + local * trans[seg + 1]
        r = slerp(np.clip(s, k_knots[0], k_knots[-1])).as_matrix()
        out.append(Pose.from_rotation_translation(r, t))
    return out


def render_panorama(params: nf.FieldParams, probe: ProbeSpec,
                    trajectory_poses: list[Pose], radii: GaussianRadii,
                    bounds: SceneBounds, n_planes: int,
                    target_dims: tuple[int, int], spacing_mm: float,
                    point_sampling: bool = False) -> VolumeGrid:
    """Render a wide field-of-view volume spanning the whole trajectory.

    One continuous field is queried at every virtual plane, so overlapping
    sweeps need no blending and the stack is seamless by construction.
    """
    poses = interpolate_trajectory(trajectory_poses, n_planes)
    return render_volume(params, probe, poses, radii, bounds, target_dims,
                         spacing_mm, point_sampling)
