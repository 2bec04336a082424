"""Bit-exact file formats: volumes, pose files, dataset manifests, PNG export.

A volume file is a single compact JSON header line (dims, spacing, dtype,
ordering, optional poses) followed by the raw little-endian float32 payload
in x-fastest order and a uint8 fan-mask payload of the same voxel count.
Datasets are a directory with a manifest.json referencing one volume and
one pose file per acquisition.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
from PIL import Image

from .geometry import Pose, ProbeSpec, load_poses, save_poses
from .phantom import SweepDataset, SweepSpec, TissueMap
from .renderer import VolumeGrid

__all__ = [
    "write_volume",
    "read_volume",
    "write_dataset",
    "read_dataset",
    "export_slice_png",
    "VolumeFormatError",
    "DatasetError",
]


class VolumeFormatError(ValueError):
    """Malformed volume file."""


class DatasetError(ValueError):
    """Malformed or inconsistent dataset manifest."""


def write_volume(grid: VolumeGrid, path, poses: list[Pose] | None = None) -> None:
    """Write header + f32le payload (+ u8 mask payload), byte-deterministic."""
    w, h, d = grid.dims
    header = {
        "dims": [w, h, d],
        "spacing_mm": grid.spacing_mm,
        "dtype": "f32le",
        "order": "x-fastest",
        "mask_dtype": "u8",
    }
    if poses is not None:
        header["poses"] = [p.matrix.reshape(-1).tolist() for p in poses]
    payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    mask = np.ascontiguousarray(grid.fan_mask, dtype=np.uint8).tobytes()
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        f.write(payload)
        f.write(mask)


def read_volume(path) -> tuple[VolumeGrid, list[Pose] | None]:
    """Read a volume file; validates payload size against the header."""
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise VolumeFormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise VolumeFormatError(f"{path}: bad header JSON: {e}") from e
    if header.get("dtype") != "f32le" or header.get("order") != "x-fastest":
        raise VolumeFormatError(f"{path}: unsupported dtype/order")
    w, h, d = header["dims"]
    n = w * h * d
    body = raw[nl + 1:]
    expected = n * 4 + n
    if len(body) != expected:
        raise VolumeFormatError(
            f"{path}: payload size {len(body)} does not match dims (expected {expected})"
        )
    data = np.frombuffer(body[: n * 4], dtype="<f4").astype(np.float64).reshape(d, h, w)
    mask = np.frombuffer(body[n * 4:], dtype=np.uint8).reshape(d, h, w).astype(bool)
    grid = VolumeGrid(data=data, fan_mask=mask, spacing_mm=float(header["spacing_mm"]))
    poses = None
    if "poses" in header:
        poses = [Pose(np.array(row).reshape(4, 4)) for row in header["poses"]]
    return grid, poses


def _config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_dataset(dataset: SweepDataset, out_dir) -> str:
    """Write a dataset directory; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, (vol, poses) in enumerate(zip(dataset.volumes, dataset.slice_poses)):
        vol_name = f"volume_{i:03d}.vol"
        pose_name = f"poses_{i:03d}.json"
        write_volume(vol, os.path.join(out_dir, vol_name))
        save_poses(poses, os.path.join(out_dir, pose_name))
        entries.append({"volume": vol_name, "poses": pose_name, "index": i})
    gen_config = {
        "tissue": dataset.tissue.to_dict() if dataset.tissue else None,
        "sweep": dataset.sweep.to_dict() if dataset.sweep else None,
        "extra": dataset.extra,
    }
    manifest = {
        "version": 1,
        "probe": dataset.probe.to_dict(),
        "volumes": entries,
        "generator": gen_config,
        "generator_hash": _config_hash(gen_config),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return path


def read_dataset(manifest_path) -> SweepDataset:
    """Load and cross-validate a dataset directory."""
    manifest_path = str(manifest_path)
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DatasetError(f"missing manifest file: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != 1:
        raise DatasetError(f"manifest version mismatch: {manifest.get('version')} != 1")
    probe = ProbeSpec.from_dict(manifest["probe"])
    base = os.path.dirname(manifest_path)

    volumes, slice_poses = [], []
    for entry in manifest["volumes"]:
        vpath = os.path.join(base, entry["volume"])
        ppath = os.path.join(base, entry["poses"])
        if not os.path.exists(vpath):
            raise DatasetError(f"missing volume file: {vpath}")
        if not os.path.exists(ppath):
            raise DatasetError(f"missing pose file: {ppath}")
        grid, _ = read_volume(vpath)
        poses = load_poses(ppath)
        if len(poses) != grid.data.shape[0]:
            raise DatasetError(
                f"pose count {len(poses)} does not match {grid.data.shape[0]} "
                f"slices in {entry['volume']}"
            )
        volumes.append(grid)
        slice_poses.append(poses)

    gen = manifest.get("generator", {})
    tissue = TissueMap.from_dict(gen["tissue"]) if gen.get("tissue") else None
    sweep = SweepSpec.from_dict(gen["sweep"]) if gen.get("sweep") else None
    return SweepDataset(probe=probe, volumes=volumes, slice_poses=slice_poses,
                        tissue=tissue, sweep=sweep, extra=gen.get("extra", {}))


_AXES = {"x": 2, "y": 1, "z": 0, 0: 0, 1: 1, 2: 2}


def export_slice_png(grid: VolumeGrid, axis, index: int, path) -> None:
    """Save one slice as 8-bit grayscale, [0,1] -> [0,255] round-half-up.

    ``axis`` is "x", "y", or "z" (or the matching data axis 2/1/0);
    masked-out voxels render black.
    """
    if axis not in _AXES:
        raise ValueError(f"unknown axis {axis!r}")
    ax = _AXES[axis]
    if not 0 <= index < grid.data.shape[ax]:
        raise IndexError(
            f"slice index {index} out of range for axis {axis} "
            f"(size {grid.data.shape[ax]})"
        )
    plane = np.take(grid.data, index, axis=ax)
    mask = np.take(grid.fan_mask, index, axis=ax)
    plane = np.where(mask, plane, 0.0)
    pixels = np.floor(np.clip(plane, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path)


def plane_to_png_bytes(plane: np.ndarray, mask: np.ndarray | None = None) -> bytes:
    """Quantize a [0,1] plane to PNG bytes (used by the render service)."""
    import io

    if mask is not None:
        plane = np.where(mask, plane, 0.0)
    pixels = np.floor(np.clip(plane, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="L").save(buf, format="PNG")
    return buf.getvalue()
