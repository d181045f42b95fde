import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from innovrefine.errors import InvalidSpec, SamplingExhausted
from innovrefine.geometry import CameraIntrinsics, project
from innovrefine.metrics import add_metric
from innovrefine.pose_recovery import decode_pose, vote_keypoint
from innovrefine.synth import (
    CorruptionSpec,
    PoseSampler,
    box_model,
    corrupt,
    default_intrinsics,
    generate_scene,
    load_scene,
    save_scene,
)
from innovrefine.vectorfield import PixelGrid, state_distance

GRID = PixelGrid(32, 32)
INTR = default_intrinsics(32)
seeds = st.integers(0, 2 ** 32 - 1)


def test_box_model_shape(model):
    assert model.points.shape == (400, 3)
    assert model.keypoints.shape == (8, 3)
    assert not model.symmetric


def test_scene_deterministic(model):
    a = generate_scene(model, PoseSampler(), INTR, GRID, 11)
    b = generate_scene(model, PoseSampler(), INTR, GRID, 11)
    assert np.array_equal(a.pose.rotation, b.pose.rotation)
    assert a.gt_field == b.gt_field
    assert a.mask == b.mask


def test_scene_keypoints_visible_and_consistent(scene):
    kp = scene.keypoints2d
    assert np.all((kp >= 0) & (kp <= 31))
    np.testing.assert_array_equal(kp, project(scene.model.keypoints, scene.pose, scene.intrinsics))
    assert scene.mask.count >= 2


def test_scene_round_trip_decodes(scene):
    pose, _ = decode_pose(scene.gt_field, scene.mask, scene.model, scene.intrinsics)
    assert add_metric(scene.pose, pose, scene.model) < 1e-3 * scene.model.diameter


def test_one_pixel_image_exhausts_sampling(model):
    tiny = CameraIntrinsics(1.25, 1.25, 0.0, 0.0, 1, 1)
    with pytest.raises(SamplingExhausted):
        generate_scene(model, PoseSampler(), tiny, PixelGrid(1, 1), 0)


@pytest.mark.parametrize("spec", [
    CorruptionSpec("none"),
    CorruptionSpec("angular_noise", sigma_deg=0.0),
    CorruptionSpec("keypoint_shift", shifts=((0.0, 0.0),)),
    CorruptionSpec("region_scramble", fraction=0.0),
])
def test_null_corruptions_are_identity(scene, spec):
    assert corrupt(scene, spec, seed=1) == scene.gt_field


@pytest.mark.parametrize("spec", [
    CorruptionSpec("angular_noise", sigma_deg=25.0),
    CorruptionSpec("keypoint_shift", shifts=((3.0, -2.0), (1.0, 1.0))),
    CorruptionSpec("region_scramble", fraction=0.5),
])
def test_corruptions_keep_background_zero(scene, spec):
    x = corrupt(scene, spec, seed=2).vectors
    assert not np.any(x[:, ~scene.mask.membership])


@given(seeds)
def test_angular_noise_preserves_unit_norm(seed):
    sc = _scene()
    x = corrupt(sc, CorruptionSpec("angular_noise", sigma_deg=30.0), seed=seed).vectors
    n = np.linalg.norm(x[:, sc.mask.membership], axis=-1)
    np.testing.assert_allclose(n, 1.0, atol=1e-12, rtol=0)


def test_corrupt_deterministic_per_seed(scene):
    spec = CorruptionSpec("region_scramble", fraction=0.3)
    assert corrupt(scene, spec, seed=5) == corrupt(scene, spec, seed=5)
    assert corrupt(scene, spec, seed=5) != corrupt(scene, spec, seed=6)


def test_shifted_keypoint_is_voted_at_new_location(scene):
    x = corrupt(scene, CorruptionSpec("keypoint_shift", shifts=((3.0, 0.0),)), seed=0)
    kp = vote_keypoint(x, scene.mask, 0)
    assert np.linalg.norm(kp.mean - (scene.keypoints2d[0] + [3.0, 0.0])) < 0.5


def test_angular_noise_expected_distance():
    model = box_model(extent=(2.0, 2.0, 0.2))
    sc = generate_scene(model, PoseSampler((2.5, 2.6), 0.45), default_intrinsics(160),
                        PixelGrid(160, 160), 0)
    assert sc.mask.count >= 10_000
    sigma = 10.0
    x = corrupt(sc, CorruptionSpec("angular_noise", sigma_deg=sigma), seed=3)
    want = 2.0 * (1.0 - np.exp(-np.deg2rad(sigma) ** 2 / 2.0))
    assert state_distance(x, sc.gt_field, sc.mask, 0) == pytest.approx(want, rel=0.10)


def test_bad_corruption_spec():
    with pytest.raises(InvalidSpec):
        CorruptionSpec("blur")
    with pytest.raises(InvalidSpec):
        CorruptionSpec("region_scramble", fraction=1.5)


def test_scene_save_load(tmp_path, scene):
    save_scene(tmp_path / "s", scene)
    back = load_scene(tmp_path / "s")
    assert back.gt_field == scene.gt_field
    assert back.mask == scene.mask
    assert np.array_equal(back.pose.rotation, scene.pose.rotation)
    assert np.array_equal(back.model.points, scene.model.points)
    assert np.array_equal(back.model.keypoints, scene.model.keypoints)
    assert back.seed == scene.seed


_CACHE = {}


def _scene():
    if "s" not in _CACHE:
        _CACHE["s"] = generate_scene(box_model(), PoseSampler(), INTR, GRID, 3)
    return _CACHE["s"]
