"""Training loop, evaluation metrics, and the panorama seam statistic.

One optimization step renders a whole stacked volume at its slice poses,
compares it against the tracked ground truth with the volumetric objective,
and backpropagates through scan conversion, the transmission integral, and
the coordinate MLP.  Sample encodings depend only on geometry, so they are
precomputed once per volume and reused every epoch; this is what makes CPU
training practical.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import field as nf
from .encoding import SceneBounds, encode_world
from .frustum import GaussianRadii, base_radii
from .losses import LossConfig, LossReport, total_loss_with_grad
from .phantom import SweepDataset
from .renderer import (
    ScanConverter,
    VolumeGrid,
    beer_lambert,
    beer_lambert_backward,
    render_volume,
    segment_length_mm,
    slice_sample_geometry,
)

__all__ = [
    "TrainConfig",
    "EvalReport",
    "train",
    "evaluate",
    "seam_metric",
    "psnr_db",
    "downsample_elevational",
    "scene_bounds_for_dataset",
]

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    volumes_per_step: int = 1
    lr_initial: float = 5e-4
    lr_final: float = 5e-5
    loss: LossConfig = dc_field(default_factory=LossConfig)
    field: nf.FieldConfig = dc_field(default_factory=nf.FieldConfig)
    sampling_mode: str = "mvg"
    elevational_downsample: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.sampling_mode not in ("mvg", "point"):
            raise ValueError("sampling_mode must be 'mvg' or 'point'")
        if self.elevational_downsample < 1:
            raise ValueError("elevational_downsample must be >= 1")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "volumes_per_step": self.volumes_per_step,
            "lr_initial": self.lr_initial,
            "lr_final": self.lr_final,
            "loss": self.loss.to_dict(),
            "field": self.field.to_dict(),
            "sampling_mode": self.sampling_mode,
            "elevational_downsample": self.elevational_downsample,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossConfig.from_dict(d["loss"])
        if "field" in d:
            d["field"] = nf.FieldConfig.from_dict(d["field"])
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class EvalReport:
    psnr_db: float
    ssim: float
    seam_ratio: float
    n_voxels: int

    def to_dict(self) -> dict:
        return {
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "seam_ratio": self.seam_ratio,
            "n_voxels": self.n_voxels,
        }


def downsample_elevational(dataset: SweepDataset, factor: int) -> SweepDataset:
    """Keep every factor-th slice (and its ground-truth plane) per volume."""
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    if factor == 1:
        return dataset
    volumes, poses = [], []
    for vol, vol_poses in zip(dataset.volumes, dataset.slice_poses):
        volumes.append(VolumeGrid(
            data=vol.data[::factor].copy(),
            fan_mask=vol.fan_mask[::factor].copy(),
            spacing_mm=vol.spacing_mm,
        ))
        poses.append(vol_poses[::factor])
    return SweepDataset(probe=dataset.probe, volumes=volumes, slice_poses=poses,
                        tissue=dataset.tissue, sweep=dataset.sweep,
                        extra=dict(dataset.extra))


def scene_bounds_for_dataset(dataset: SweepDataset, margin_mm: float = 2.0) -> SceneBounds:
    """World AABB covering every fan in the dataset, plus a margin."""
    trans = np.array([p.translation for poses in dataset.slice_poses for p in poses])
    r = dataset.probe.r_out_mm + margin_mm
    return SceneBounds(lo=trans.min(axis=0) - r, hi=trans.max(axis=0) + r)


def _volume_features(dataset: SweepDataset, vol_index: int, radii: GaussianRadii,
                     bounds: SceneBounds, num_bands: int, point_sampling: bool):
    """Encoded features for every sample of one volume, float32."""
    probe = dataset.probe
    feats = []
    for pose in dataset.slice_poses[vol_index]:
        pos, diag = slice_sample_geometry(probe, pose, radii, point_sampling)
        feats.append(encode_world(pos.reshape(-1, 3), diag.reshape(-1, 3),
                                  bounds, num_bands))
    return np.concatenate(feats, axis=0).astype(np.float32)


def _lr_at(config: TrainConfig, step: int) -> float:
    frac = step / max(config.iterations - 1, 1)
    return config.lr_initial * (config.lr_final / config.lr_initial) ** frac


def train(dataset: SweepDataset, config: TrainConfig,
          out_dir: str | None = None, log_every: int = 0):
    """Fit the field to a tracked dataset.

    Returns (params, history) where history is a list of LossReport, one
    per step.  When ``out_dir`` is given, checkpoints and a loss CSV are
    written there.  Raises TrainingError on a non-finite loss, leaving the
    last periodic checkpoint (if any) in place.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    dataset = downsample_elevational(dataset, config.elevational_downsample)
    probe = dataset.probe
    radii = base_radii(probe.s_lat_mm,
                       probe.s_dep_mm * config.elevational_downsample)
    bounds = scene_bounds_for_dataset(dataset)
    point_sampling = config.sampling_mode == "point"
    num_bands = config.field.num_bands

    _, h, w = dataset.volumes[0].data.shape
    spacing = dataset.volumes[0].spacing_mm
    conv = ScanConverter(probe, w, h, spacing)
    delta = segment_length_mm(probe)

    features = [
        _volume_features(dataset, i, radii, bounds, num_bands, point_sampling)
        for i in range(len(dataset))
    ]
    n_slices = [len(p) for p in dataset.slice_poses]

    params = nf.init(config.field).astype(np.float32)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(dataset))
    cursor = 0

    history: list[LossReport] = []
    extra = {
        "bounds": bounds.to_dict(),
        "train_config": config.to_dict(),
        "probe": probe.to_dict(),
        "radii": {"r_lat": radii.r_lat, "r_dep": radii.r_dep},
        "spacing_mm": spacing,
        "target_dims": [w, h],
        "poses": [p.matrix.reshape(-1).tolist()
                  for poses in dataset.slice_poses for p in poses],
    }

    def checkpoint(name: str):
        if out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        nf.save_checkpoint(params, os.path.join(out_dir, name), extra=extra)

    for step in range(config.iterations):
        grads_w = [np.zeros_like(wt) for wt in params.weights]
        grads_b = [np.zeros_like(bt) for bt in params.biases]
        report_acc = np.zeros(5)

        for _ in range(config.volumes_per_step):
            if cursor >= len(order):
                order = rng.permutation(len(dataset))
                cursor = 0
            vi = int(order[cursor])
            cursor += 1

            feats = features[vi]
            logits, cache = nf.forward_raw(params, feats, want_cache=True)
            alpha, b = nf.heads(logits)
            shape = (n_slices[vi], probe.n_rays, probe.n_samples)
            alpha = alpha.reshape(shape)
            b = b.reshape(shape)
            fan = beer_lambert(alpha, b, delta)

            planes = np.stack([conv.convert(fan[s]) for s in range(shape[0])])
            mask = np.broadcast_to(conv.mask, planes.shape)
            pred = VolumeGrid(data=planes, fan_mask=np.array(mask),
                              spacing_mm=spacing)
            truth = dataset.volumes[vi]
            report, d_pred = total_loss_with_grad(
                pred, truth, config.loss, step, config.iterations)
            if not np.isfinite(report.total):
                raise nf.TrainingError(
                    f"non-finite loss {report.total} at step {step}")

            d_fan = np.stack([conv.adjoint(d_pred[s]) for s in range(shape[0])])
            d_alpha, d_b = beer_lambert_backward(alpha, b, delta, d_fan)
            d_logits = nf.heads_backward(
                logits.reshape(shape + (2,)),
                d_alpha, d_b).reshape(-1, 2).astype(np.float32)
            d_w, d_b_ = nf.backward(params, cache, d_logits)
            for acc, g in zip(grads_w, d_w):
                acc += g
            for acc, g in zip(grads_b, d_b_):
                acc += g
            report_acc += np.array([report.total, report.mse, report.ssim_loss,
                                    report.grad_loss, report.reg_loss])

        report_acc /= config.volumes_per_step
        history.append(LossReport(*report_acc))
        nf.optimizer_step(params, (grads_w, grads_b), _lr_at(config, step))

        if log_every and (step % log_every == 0 or step == config.iterations - 1):
            print(f"step {step:6d}  loss {report_acc[0]:.6f}  "
                  f"mse {report_acc[1]:.6f}", flush=True)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            checkpoint(f"checkpoint_{step + 1:06d}.json")

    checkpoint("checkpoint_final.json")
    if out_dir is not None:
        write_loss_csv(history, os.path.join(out_dir, "loss.csv"))
    return params, history


def write_loss_csv(history: list[LossReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "total", "mse", "ssim", "grad", "reg"])
        for i, r in enumerate(history):
            writer.writerow([i, r.total, r.mse, r.ssim_loss, r.grad_loss, r.reg_loss])


def psnr_db(mse_value: float) -> float:
    """PSNR for unit dynamic range, capped at 99 dB for exact matches."""
    if mse_value <= 10.0 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse_value))


def _mean_ssim(pred: VolumeGrid, truth: VolumeGrid) -> float:
    from .losses import ssim_loss

    return 1.0 - ssim_loss(pred, truth)


def evaluate(params: nf.FieldParams, dataset: SweepDataset,
             radii: GaussianRadii, bounds: SceneBounds,
             point_sampling: bool = False,
             panorama: VolumeGrid | None = None,
             boundary_planes: list[int] | None = None) -> EvalReport:
    """PSNR and mean SSIM of rendered vs ground-truth volumes, in-mask.

    If a panorama and its sweep-boundary plane indices are supplied, the
    seam ratio is included; otherwise it reports the seam-free value 1.0.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    probe = dataset.probe
    sq_err = 0.0
    n_total = 0
    ssims = []
    for vol, poses in zip(dataset.volumes, dataset.slice_poses):
        d, hh, ww = vol.data.shape
        pred = render_volume(params, probe, poses, radii, bounds,
                             (ww, hh), vol.spacing_mm, point_sampling)
        mask = vol.fan_mask
        n = int(mask.sum())
        if n == 0:
            raise ValueError("empty fan mask in evaluation volume")
        diff = np.where(mask, pred.data - vol.data, 0.0)
        sq_err += float(np.sum(diff**2))
        n_total += n
        ssims.append(_mean_ssim(pred, vol))
    report_mse = sq_err / n_total
    seam = 1.0
    if panorama is not None and boundary_planes is not None:
        seam = seam_metric(panorama, boundary_planes)
    return EvalReport(psnr_db=psnr_db(report_mse), ssim=float(np.mean(ssims)),
                      seam_ratio=seam, n_voxels=n_total)


def seam_metric(panorama: VolumeGrid, boundary_planes: list[int]) -> float:
    """Boundary-to-interior ratio of elevational finite-difference energy.

    For interior plane p, the crossing statistic is the in-mask mean of
    |V[p] - V[p-1]|.  The metric is mean(boundary stats) / mean(all other
    interior stats); 1.0 means the stitch boundaries are indistinguishable
    from the rest of the stack.  A constant panorama is seam-free by
    convention.
    """
    d = panorama.data.shape[0]
    if d < 3:
        raise ValueError("panorama too shallow for a seam statistic")
    planes = set()
    for p in boundary_planes:
        if not 1 <= p <= d - 1:
            raise ValueError(f"boundary plane {p} not interior to [1, {d - 1}]")
        planes.add(int(p))
    if not planes:
        raise ValueError("no boundary planes given")

    stats = []
    for p in range(1, d):
        m = panorama.fan_mask[p] & panorama.fan_mask[p - 1]
        if not m.any():
            stats.append(0.0)
            continue
        stats.append(float(np.abs(panorama.data[p] - panorama.data[p - 1])[m].mean()))
    stats = np.array(stats)
    idx = np.arange(1, d)
    is_boundary = np.isin(idx, list(planes))
    if not (~is_boundary).any():
        raise ValueError("no interior planes left outside the boundaries")
    boundary = float(stats[is_boundary].mean())
    interior = float(stats[~is_boundary].mean())
    tiny = 1e-15
    if boundary < tiny and interior < tiny:
        return 1.0
    if interior < tiny:
        return float("inf")
    return boundary / interior
