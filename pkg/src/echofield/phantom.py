"""Synthetic tissue phantoms and the tracked-sweep simulator.

Ground truth for training and evaluation: an analytic tissue map (geometric
primitives over a speckle-textured background) is swept by a virtual convex
probe along a trajectory, producing overlapping tracked volumes.  The
simulator samples the tissue at segment midpoints (point sampling; the
Gaussian footprint belongs to the reconstruction, not to the world) and
runs the exact same Beer-Lambert integrator as the neural renderer.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .geometry import Pose, ProbeSpec
from .renderer import ScanConverter, VolumeGrid, render_slice

__all__ = [
    "Primitive",
    "TissueMap",
    "SweepSpec",
    "SweepDataset",
    "sample_tissue",
    "simulate_sweep",
    "holdout_split",
    "reference_phantom",
    "reference_sweep",
    "reference_probe",
]

_SHAPES = ("ellipsoid", "tube", "half-space")


@dataclass(frozen=True)
class Primitive:
    """One tissue structure.

    ellipsoid: ``center`` + ``size_mm`` as semi-axes.
    tube: infinite cylinder along ``axis`` through ``center``, radius
    ``size_mm[0]``.
    half-space: inside where (p - center) . axis <= 0.
    """

    shape: str
    center: tuple[float, float, float]
    size_mm: tuple[float, float, float]
    attenuation_per_mm: float
    backscatter: float
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ValueError(f"unknown primitive shape {self.shape!r}")
        if self.attenuation_per_mm < 0:
            raise ValueError("attenuation must be >= 0")
        if not 0.0 <= self.backscatter <= 1.0:
            raise ValueError("backscatter must be in [0, 1]")

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = points - np.asarray(self.center)
        if self.shape == "ellipsoid":
            return np.sum((p / np.asarray(self.size_mm)) ** 2, axis=-1) <= 1.0
        ax = np.asarray(self.axis, dtype=np.float64)
        ax = ax / np.linalg.norm(ax)
        if self.shape == "tube":
            radial = p - np.outer(p @ ax, ax)
            return np.sum(radial**2, axis=-1) <= self.size_mm[0] ** 2
        return p @ ax <= 0.0  # half-space

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "center": list(self.center),
            "size_mm": list(self.size_mm),
            "attenuation_per_mm": self.attenuation_per_mm,
            "backscatter": self.backscatter,
            "axis": list(self.axis),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        return cls(
            shape=d["shape"],
            center=tuple(d["center"]),
            size_mm=tuple(d["size_mm"]),
            attenuation_per_mm=d["attenuation_per_mm"],
            backscatter=d["backscatter"],
            axis=tuple(d.get("axis", (0.0, 0.0, 1.0))),
        )


class _SmoothNoise:
    """Stationary smooth noise field from seeded random Fourier features.

    Approximates a Gaussian process with the given correlation length;
    deterministic in (seed, position) so datasets are reproducible.
    """

    def __init__(self, correlation_mm: float, seed: int, n_features: int = 48):
        rng = np.random.default_rng(seed)
        self.freqs = rng.normal(0.0, 1.0 / correlation_mm, size=(n_features, 3))
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
        self.scale = np.sqrt(2.0 / n_features)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.cos(points @ self.freqs.T + self.phases).sum(axis=-1)


@dataclass(frozen=True)
class TissueMap:
    primitives: tuple[Primitive, ...]
    background_attenuation_per_mm: float = 0.01
    background_backscatter: float = 0.3
    texture_amplitude: float = 0.0
    texture_correlation_mm: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.background_attenuation_per_mm < 0:
            raise ValueError("background attenuation must be >= 0")
        if not 0.0 <= self.background_backscatter <= 1.0:
            raise ValueError("background backscatter must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "background_attenuation_per_mm": self.background_attenuation_per_mm,
            "background_backscatter": self.background_backscatter,
            "texture_amplitude": self.texture_amplitude,
            "texture_correlation_mm": self.texture_correlation_mm,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TissueMap":
        return cls(
            primitives=tuple(Primitive.from_dict(p) for p in d["primitives"]),
            background_attenuation_per_mm=d["background_attenuation_per_mm"],
            background_backscatter=d["background_backscatter"],
            texture_amplitude=d.get("texture_amplitude", 0.0),
            texture_correlation_mm=d.get("texture_correlation_mm", 3.0),
            seed=d.get("seed", 0),
        )


def sample_tissue(tissue: TissueMap, points: np.ndarray):
    """Evaluate (attenuation_per_mm, backscatter) at world points.

    Later-listed primitives win where primitives overlap.  The speckle
    texture multiplies backscatter and is clamped back into [0, 1].
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    alpha = np.full(pts.shape[0], tissue.background_attenuation_per_mm)
    b = np.full(pts.shape[0], tissue.background_backscatter)
    for prim in tissue.primitives:
        inside = prim.contains(pts)
        alpha[inside] = prim.attenuation_per_mm
        b[inside] = prim.backscatter
    if tissue.texture_amplitude > 0:
        noise = _SmoothNoise(tissue.texture_correlation_mm, tissue.seed)(pts)
        b = np.clip(b * (1.0 + tissue.texture_amplitude * noise), 0.0, 1.0)
    if np.asarray(points).ndim == 1:
        return alpha[0], b[0]
    return alpha, b


@dataclass(frozen=True)
class SweepSpec:
    """Trajectory and overlap layout for a tracked multi-volume sweep."""

    start: Pose
    end: Pose
    n_volumes: int
    slices_per_volume: int
    overlap_fraction: float = 0.5
    noise_std: float = 0.0

    def __post_init__(self):
        if self.n_volumes < 1:
            raise ValueError("n_volumes must be >= 1")
        if self.slices_per_volume < 1:
            raise ValueError("slices_per_volume must be >= 1")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must be in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    def to_dict(self) -> dict:
        return {
            "start": self.start.matrix.reshape(-1).tolist(),
            "end": self.end.matrix.reshape(-1).tolist(),
            "n_volumes": self.n_volumes,
            "slices_per_volume": self.slices_per_volume,
            "overlap_fraction": self.overlap_fraction,
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        return cls(
            start=Pose(np.array(d["start"]).reshape(4, 4)),
            end=Pose(np.array(d["end"]).reshape(4, 4)),
            n_volumes=d["n_volumes"],
            slices_per_volume=d["slices_per_volume"],
            overlap_fraction=d.get("overlap_fraction", 0.5),
            noise_std=d.get("noise_std", 0.0),
        )


@dataclass
class SweepDataset:
    """Simulated acquisition: volumes, per-slice poses, and provenance."""

    probe: ProbeSpec
    volumes: list[VolumeGrid]
    slice_poses: list[list[Pose]]
    tissue: TissueMap | None = None
    sweep: SweepSpec | None = None
    extra: dict = dc_field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.volumes)


def sweep_slice_poses(sweep: SweepSpec, spacing_mm: float) -> list[list[Pose]]:
    """Per-volume slice poses along the trajectory at voxel pitch.

    Volume i starts at offset i * (1 - overlap) * extent; slices advance
    by one voxel spacing.  The trajectory must be at least as long as the
    sweep it carries.
    """
    d = sweep.slices_per_volume
    extent = d * spacing_mm
    stride = (1.0 - sweep.overlap_fraction) * extent
    delta = sweep.end.translation - sweep.start.translation
    span = float(np.linalg.norm(delta))
    last = (sweep.n_volumes - 1) * stride + (d - 1) * spacing_mm
    if sweep.n_volumes > 1 or d > 1:
        if span <= 0:
            raise ValueError("sweep trajectory has zero length")
        if last > span + 1e-9:
            raise ValueError(
                f"trajectory span {span:.3f} mm shorter than sweep extent {last:.3f} mm"
            )
        direction = delta / span
    else:
        direction = np.zeros(3)

    rot = sweep.start.rotation
    poses = []
    for i in range(sweep.n_volumes):
        vol = []
        for k in range(d):
            t = sweep.start.translation + direction * (i * stride + k * spacing_mm)
            vol.append(Pose.from_rotation_translation(rot, t))
        poses.append(vol)
    return poses


def _render_tissue_slice(tissue: TissueMap, probe: ProbeSpec, pose: Pose,
                         conv: ScanConverter) -> np.ndarray:
    # Runs the renderer's own slice path with a direct field function, so
    # simulator and reconstruction share the integrator bitwise.
    fan = render_slice(None, probe, pose, None, None,
                       field_fn=lambda pts: sample_tissue(tissue, pts))
    return conv.convert(fan.intensities)


def simulate_sweep(tissue: TissueMap, probe: ProbeSpec, sweep: SweepSpec,
                   target_dims: tuple[int, int], spacing_mm: float,
                   seed: int = 0) -> SweepDataset:
    """Produce N overlapping tracked volumes of the phantom.

    Observation noise is zero-mean Gaussian on in-mask voxels, clipped to
    [0, 1].  Fully deterministic given (tissue, sweep, seed).
    """
    w, h = target_dims
    conv = ScanConverter(probe, w, h, spacing_mm)
    all_poses = sweep_slice_poses(sweep, spacing_mm)
    rng = np.random.default_rng(seed)

    volumes = []
    for vol_poses in all_poses:
        planes = [_render_tissue_slice(tissue, probe, p, conv) for p in vol_poses]
        data = np.stack(planes, axis=0)
        mask = np.broadcast_to(conv.mask, data.shape).copy()
        if sweep.noise_std > 0:
            data = data + rng.normal(0.0, sweep.noise_std, size=data.shape)
            data = np.clip(data, 0.0, 1.0)
        data = np.where(mask, data, 0.0)
        volumes.append(VolumeGrid(data=data, fan_mask=mask, spacing_mm=spacing_mm))
    return SweepDataset(probe=probe, volumes=volumes, slice_poses=all_poses,
                        tissue=tissue, sweep=sweep,
                        extra={"seed": seed, "target_dims": [w, h]})


def holdout_split(dataset: SweepDataset, holdout_index: int):
    """Remove one strictly interior volume; neighbors stay in the train set."""
    n = len(dataset)
    if not 0 < holdout_index < n - 1:
        raise ValueError(
            f"holdout index {holdout_index} must be interior to [0, {n - 1}]"
        )
    train = SweepDataset(
        probe=dataset.probe,
        volumes=[v for i, v in enumerate(dataset.volumes) if i != holdout_index],
        slice_poses=[p for i, p in enumerate(dataset.slice_poses) if i != holdout_index],
        tissue=dataset.tissue,
        sweep=dataset.sweep,
        extra=dict(dataset.extra),
    )
    held = SweepDataset(
        probe=dataset.probe,
        volumes=[dataset.volumes[holdout_index]],
        slice_poses=[dataset.slice_poses[holdout_index]],
        tissue=dataset.tissue,
        sweep=dataset.sweep,
        extra=dict(dataset.extra),
    )
    return train, held


# ---------------------------------------------------------------------------
# Frozen desk-scale reference configuration used by tests and the demos.


def reference_probe() -> ProbeSpec:
    return ProbeSpec(
        r_in_mm=2.0,
        r_out_mm=22.0,
        opening_angle_deg=360.0,
        n_rays=128,
        n_samples=32,
        s_lat_mm=1.0,
        s_dep_mm=1.0,
        n_slices=32,
    )


def reference_phantom() -> TissueMap:
    return TissueMap(
        primitives=(
            Primitive("ellipsoid", center=(6.0, 4.0, 50.0), size_mm=(8.0, 6.0, 22.0),
                      attenuation_per_mm=0.03, backscatter=0.75),
            Primitive("ellipsoid", center=(-7.0, -6.0, 105.0), size_mm=(6.0, 9.0, 28.0),
                      attenuation_per_mm=0.05, backscatter=0.12),
            Primitive("tube", center=(0.0, -2.0, 0.0), size_mm=(3.5, 0.0, 0.0),
                      attenuation_per_mm=0.02, backscatter=0.55,
                      axis=(0.1, 0.0, 1.0)),
        ),
        background_attenuation_per_mm=0.01,
        background_backscatter=0.35,
        texture_amplitude=0.12,
        texture_correlation_mm=3.0,
        seed=7,
    )


def reference_sweep(n_volumes: int = 9, slices_per_volume: int = 32,
                    spacing_mm: float = 1.0, overlap_fraction: float = 0.5,
                    noise_std: float = 0.01) -> SweepSpec:
    extent = slices_per_volume * spacing_mm
    stride = (1.0 - overlap_fraction) * extent
    span = (n_volumes - 1) * stride + extent
    return SweepSpec(
        start=Pose.identity(),
        end=Pose.from_translation((0.0, 0.0, span)),
        n_volumes=n_volumes,
        slices_per_volume=slices_per_volume,
        overlap_fraction=overlap_fraction,
        noise_std=noise_std,
    )
