"""Neural ultrasound field engine for wide field-of-view convex-probe sweeps."""

from .encoding import SceneBounds, encode, world_diag
from .field import FieldConfig, FieldParams, load_checkpoint, save_checkpoint
from .frustum import (
    FrustumGaussian,
    GaussianRadii,
    SegmentBounds,
    base_radii,
    build_covariance,
    mean_distance,
    perpendicular_variance,
    ray_variance,
)
from .geometry import (
    Pose,
    ProbeSpec,
    Ray,
    cast_slice_rays,
    elevational_step,
    polar_to_cartesian,
    stack_volume_rays,
)
from .losses import LossConfig, LossReport, grad_loss, mse, ssim_loss, total_loss
from .phantom import (
    Primitive,
    SweepDataset,
    SweepSpec,
    TissueMap,
    holdout_split,
    sample_tissue,
    simulate_sweep,
)
from .renderer import (
    FanImage,
    VolumeGrid,
    render_panorama,
    render_ray,
    render_slice,
    render_volume,
    scan_convert,
)
from .training import EvalReport, TrainConfig, evaluate, seam_metric, train
from .volume_io import export_slice_png, read_dataset, read_volume, write_dataset, write_volume

__version__ = "0.1.0"

__all__ = [
    "SceneBounds", "encode", "world_diag",
    "FieldConfig", "FieldParams", "load_checkpoint", "save_checkpoint",
    "FrustumGaussian", "GaussianRadii", "SegmentBounds", "base_radii",
    "build_covariance", "mean_distance", "perpendicular_variance", "ray_variance",
    "Pose", "ProbeSpec", "Ray", "cast_slice_rays", "elevational_step",
    "polar_to_cartesian", "stack_volume_rays",
    "LossConfig", "LossReport", "grad_loss", "mse", "ssim_loss", "total_loss",
    "Primitive", "SweepDataset", "SweepSpec", "TissueMap",
    "holdout_split", "sample_tissue", "simulate_sweep",
    "FanImage", "VolumeGrid", "render_panorama", "render_ray",
    "render_slice", "render_volume", "scan_convert",
    "EvalReport", "TrainConfig", "evaluate", "seam_metric", "train",
    "export_slice_png", "read_dataset", "read_volume", "write_dataset", "write_volume",
]
