import json

import numpy as np
import pytest
from PIL import Image

from echofield.geometry import Pose, ProbeSpec
from echofield.phantom import (
    SweepSpec,
    TissueMap,
    reference_phantom,
    simulate_sweep,
)
from echofield.renderer import VolumeGrid
from echofield.volume_io import (
    DatasetError,
    VolumeFormatError,
    export_slice_png,
    plane_to_png_bytes,
    read_dataset,
    read_volume,
    write_dataset,
    write_volume,
)


@pytest.fixture
def grid(rng):
    data = rng.uniform(0, 1, (3, 5, 4))
    mask = rng.random((3, 5, 4)) > 0.3
    data = np.where(mask, data, 0.0)
    return VolumeGrid(data, mask, 0.8)


@pytest.fixture
def tiny_dataset():
    tissue = TissueMap(primitives=(), background_backscatter=0.4,
                       background_attenuation_per_mm=0.02)
    probe = ProbeSpec(r_in_mm=2, r_out_mm=12, opening_angle_deg=360,
                      n_rays=16, n_samples=8, s_lat_mm=1, s_dep_mm=1, n_slices=3)
    sweep = SweepSpec(start=Pose.identity(), end=Pose.from_translation((0, 0, 6)),
                      n_volumes=2, slices_per_volume=3, overlap_fraction=0.5,
                      noise_std=0.01)
    return simulate_sweep(tissue, probe, sweep, (20, 20), 1.0, seed=3)


class TestVolumeFile:
    def test_round_trip_values(self, grid, tmp_path):
        path = tmp_path / "v.vol"
        write_volume(grid, path)
        back, poses = read_volume(path)
        np.testing.assert_array_equal(back.data, grid.data.astype(np.float32))
        np.testing.assert_array_equal(back.fan_mask, grid.fan_mask)
        assert back.spacing_mm == grid.spacing_mm
        assert poses is None

    def test_round_trip_with_poses(self, grid, tmp_path):
        poses = [Pose.from_translation((0, 0, z)) for z in range(3)]
        path = tmp_path / "v.vol"
        write_volume(grid, path, poses=poses)
        _, back = read_volume(path)
        assert len(back) == 3
        for a, b in zip(poses, back):
            np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_writes_are_byte_deterministic(self, grid, tmp_path):
        a, b = tmp_path / "a.vol", tmp_path / "b.vol"
        write_volume(grid, a)
        write_volume(grid, b)
        assert a.read_bytes() == b.read_bytes()

    def test_header_layout(self, grid, tmp_path):
        path = tmp_path / "v.vol"
        write_volume(grid, path)
        raw = path.read_bytes()
        header = json.loads(raw[: raw.find(b"\n")])
        assert header["dims"] == [4, 5, 3]  # (W, H, D)
        assert header["dtype"] == "f32le"
        assert header["order"] == "x-fastest"
        n = 4 * 5 * 3
        assert len(raw) - raw.find(b"\n") - 1 == n * 4 + n

    def test_payload_is_x_fastest(self, tmp_path):
        data = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
        grid = VolumeGrid(data, np.ones((2, 3, 4), bool), 1.0)
        path = tmp_path / "v.vol"
        write_volume(grid, path)
        raw = path.read_bytes()
        body = raw[raw.find(b"\n") + 1:]
        flat = np.frombuffer(body[: 24 * 4], dtype="<f4")
        np.testing.assert_array_equal(flat, np.arange(24, dtype=np.float32))

    def test_rejects_truncated_payload(self, grid, tmp_path):
        path = tmp_path / "v.vol"
        write_volume(grid, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(VolumeFormatError, match="payload size"):
            read_volume(path)

    def test_rejects_garbage_header(self, tmp_path):
        path = tmp_path / "v.vol"
        path.write_bytes(b"not json\n\x00\x00")
        with pytest.raises(VolumeFormatError, match="header"):
            read_volume(path)

    def test_rejects_missing_newline(self, tmp_path):
        path = tmp_path / "v.vol"
        path.write_bytes(b"\x00\x01\x02")
        with pytest.raises(VolumeFormatError, match="header"):
            read_volume(path)


class TestDataset:
    def test_round_trip(self, tiny_dataset, tmp_path):
        manifest = write_dataset(tiny_dataset, tmp_path / "ds")
        back = read_dataset(manifest)
        assert len(back) == len(tiny_dataset)
        assert back.probe == tiny_dataset.probe
        for va, vb in zip(tiny_dataset.volumes, back.volumes):
            np.testing.assert_array_equal(va.data.astype(np.float32), vb.data)
            np.testing.assert_array_equal(va.fan_mask, vb.fan_mask)
        for pa, pb in zip(tiny_dataset.slice_poses, back.slice_poses):
            for a, b in zip(pa, pb):
                np.testing.assert_array_equal(a.matrix, b.matrix)
        assert back.tissue == tiny_dataset.tissue

    def test_accepts_directory_path(self, tiny_dataset, tmp_path):
        write_dataset(tiny_dataset, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        assert len(back) == 2

    def test_generator_hash_is_stable(self, tiny_dataset, tmp_path):
        m1 = write_dataset(tiny_dataset, tmp_path / "a")
        m2 = write_dataset(tiny_dataset, tmp_path / "b")
        h1 = json.loads(open(m1).read())["generator_hash"]
        h2 = json.loads(open(m2).read())["generator_hash"]
        assert h1 == h2 and len(h1) == 16

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError, match="missing manifest"):
            read_dataset(tmp_path / "nope")

    def test_missing_volume_file(self, tiny_dataset, tmp_path):
        manifest = write_dataset(tiny_dataset, tmp_path / "ds")
        (tmp_path / "ds" / "volume_001.vol").unlink()
        with pytest.raises(DatasetError, match="missing volume file"):
            read_dataset(manifest)

    def test_version_mismatch(self, tiny_dataset, tmp_path):
        manifest = write_dataset(tiny_dataset, tmp_path / "ds")
        doc = json.loads(open(manifest).read())
        doc["version"] = 2
        with open(manifest, "w") as f:
            json.dump(doc, f)
        with pytest.raises(DatasetError, match="version mismatch"):
            read_dataset(manifest)

    def test_pose_count_mismatch(self, tiny_dataset, tmp_path):
        manifest = write_dataset(tiny_dataset, tmp_path / "ds")
        pose_file = tmp_path / "ds" / "poses_000.json"
        doc = json.loads(pose_file.read_text())
        doc["poses"] = doc["poses"][:-1]
        pose_file.write_text(json.dumps(doc))
        with pytest.raises(DatasetError, match="pose count"):
            read_dataset(manifest)


class TestPngExport:
    def test_quantization_rule(self, tmp_path):
        # floor(v * 255 + 0.5): 0 -> 0, 1 -> 255, 0.5 -> 128
        data = np.array([[[0.0, 1.0, 0.5, 2 / 255 + 1e-9]]])
        grid = VolumeGrid(data, np.ones_like(data, bool), 1.0)
        path = tmp_path / "s.png"
        export_slice_png(grid, "z", 0, path)
        img = np.asarray(Image.open(path))
        np.testing.assert_array_equal(img, [[0, 255, 128, 2]])

    def test_masked_voxels_render_black(self, tmp_path):
        data = np.full((1, 2, 2), 0.9)
        mask = np.array([[[True, False], [False, True]]])
        grid = VolumeGrid(np.where(mask, data, 0.0), mask, 1.0)
        path = tmp_path / "s.png"
        export_slice_png(grid, 0, 0, path)
        img = np.asarray(Image.open(path))
        np.testing.assert_array_equal(img, [[230, 0], [0, 230]])

    def test_axis_letters_select_data_axes(self, grid, tmp_path):
        for axis, ax_idx in (("x", 2), ("y", 1), ("z", 0)):
            path = tmp_path / f"{axis}.png"
            export_slice_png(grid, axis, 1, path)
            img = np.asarray(Image.open(path))
            expected = np.take(np.where(grid.fan_mask, grid.data, 0.0), 1, axis=ax_idx)
            np.testing.assert_array_equal(
                img, np.floor(np.clip(expected, 0, 1) * 255 + 0.5).astype(np.uint8))

    def test_rejects_bad_axis_and_index(self, grid, tmp_path):
        with pytest.raises(ValueError, match="axis"):
            export_slice_png(grid, "w", 0, tmp_path / "s.png")
        with pytest.raises(IndexError, match="out of range"):
            export_slice_png(grid, "z", 3, tmp_path / "s.png")

    def test_png_bytes_deterministic_and_decodable(self, rng):
        plane = rng.uniform(0, 1, (8, 8))
        mask = rng.random((8, 8)) > 0.5
        a = plane_to_png_bytes(plane, mask)
        b = plane_to_png_bytes(plane, mask)
        assert a == b
        import io

        img = np.asarray(Image.open(io.BytesIO(a)))
        assert img.shape == (8, 8)
        np.testing.assert_array_equal(img[~mask], 0)
