import numpy as np
import pytest

from echofield.geometry import Pose, ProbeSpec


@pytest.fixture
def small_probe():
    return ProbeSpec(
        r_in_mm=2.0, r_out_mm=22.0, opening_angle_deg=360.0,
        n_rays=16, n_samples=8, s_lat_mm=1.0, s_dep_mm=1.0, n_slices=4,
    )


@pytest.fixture
def wedge_probe():
    return ProbeSpec(
        r_in_mm=5.0, r_out_mm=45.0, opening_angle_deg=60.0,
        n_rays=9, n_samples=10, s_lat_mm=0.5, s_dep_mm=0.8, n_slices=2,
    )


@pytest.fixture
def identity_pose():
    return Pose.identity()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained_checkpoint(tmp_path_factory):
    """A tiny dataset trained for a few steps; shared by CLI/service tests.

    Returns (dataset_dir, checkpoint_path) as strings.
    """
    from echofield.field import FieldConfig
    from echofield.phantom import SweepSpec, TissueMap, simulate_sweep
    from echofield.training import TrainConfig, train
    from echofield.volume_io import write_dataset

    base = tmp_path_factory.mktemp("trained")
    tissue = TissueMap(primitives=(), background_attenuation_per_mm=0.02,
                       background_backscatter=0.45, texture_amplitude=0.1,
                       texture_correlation_mm=4.0, seed=2)
    probe = ProbeSpec(r_in_mm=2, r_out_mm=12, opening_angle_deg=360,
                      n_rays=16, n_samples=8, s_lat_mm=1, s_dep_mm=1, n_slices=4)
    sweep = SweepSpec(start=Pose.identity(), end=Pose.from_translation((0, 0, 8)),
                      n_volumes=3, slices_per_volume=4, overlap_fraction=0.5)
    dataset = simulate_sweep(tissue, probe, sweep, (22, 22), 1.0, seed=4)
    ds_dir = base / "dataset"
    write_dataset(dataset, ds_dir)

    run_dir = base / "run"
    config = TrainConfig(
        iterations=8,
        field=FieldConfig(num_layers=2, hidden_width=16, num_bands=4, seed=0))
    train(dataset, config, out_dir=str(run_dir))
    return str(ds_dir), str(run_dir / "checkpoint_final.json")


def random_pose(rng) -> Pose:
    from scipy.spatial.transform import Rotation

    r = Rotation.random(random_state=np.random.RandomState(rng.integers(2**31)))
    return Pose.from_rotation_translation(r.as_matrix(), rng.uniform(-50, 50, 3))
