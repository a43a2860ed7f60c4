import numpy as np
import pytest
from scipy import stats

from posetrack.geom import (
    EulerXYZ,
    Pose,
    TriMesh,
    cylinder_mesh,
    ellipsoid,
    euler_from_rot,
    random_rotation,
    rot_from_euler,
)
from posetrack.synth import (
    AugmentConfig,
    Camera,
    DatasetConfig,
    DeltaRanges,
    NoiseParams,
    OcclusionBranch,
    RgbdFrame,
    adjust_contrast,
    adjust_gamma,
    augment_photometric,
    composite,
    draw_occlusion,
    generate_dataset,
    kinect_noise,
    load_dataset,
    procedural_background,
    read_manifest,
    render,
    sample_pose_pair,
    write_dataset,
)
from posetrack.utils.errors import DatasetError, DimensionMismatch, OutOfFrustum


@pytest.fixture
def cam():
    """Default 150x150 pinhole camera."""
    return Camera()


@pytest.fixture
def square():
    """A 10 cm square in the object xy plane, facing the camera."""
    vertices = np.array([[-0.05, -0.05, 0.0], [0.05, -0.05, 0.0], [0.05, 0.05, 0.0], [-0.05, 0.05, 0.0]])
    return TriMesh(vertices, np.array([[0, 1, 2], [0, 2, 3]]))


@pytest.fixture
def quiet_config():
    """Dataset configuration with no motion, augmentation or noise."""
    return DatasetConfig(
        n_viewpoints=8,
        deltas=DeltaRanges(0.0, 0.0),
        augment=AugmentConfig.identity(),
        noise=NoiseParams.zero(),
    )


def _flat_frame(depth_mm, valid=None):
    depth = np.asarray(depth_mm, dtype=np.uint16)
    fg = depth > 0 if valid is None else valid
    rgb = np.full(depth.shape + (3,), 128, np.uint8)
    return RgbdFrame(rgb, depth, fg, fg)


def test_render_triangle_depth_at_center(cam):
    tri = TriMesh(np.array([[-0.2, -0.2, 0.0], [0.2, -0.2, 0.0], [0.0, 0.2, 0.0]]), np.array([[0, 1, 2]]))
    frame = render(tri, Pose(np.eye(3), [0.0, 0.0, 1.0]), cam)
    assert frame.depth[75, 75] == 1000
    assert frame.fg_mask[75, 75]
    assert np.array_equal(frame.fg_mask, frame.unoccl_mask)


def test_render_empty_region_is_invalid(cam, square):
    frame = render(square, Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    assert frame.depth[0, 0] == 0
    assert not frame.fg_mask[0, 0]
    assert np.all(frame.depth[~frame.fg_mask] == 0)
    assert np.all(frame.rgb[~frame.fg_mask] == 0)


def test_render_translation_shifts_centroid(cam, square):
    z = 0.8
    a = render(square, Pose(np.eye(3), [0.0, 0.0, z]), cam)
    b = render(square, Pose(np.eye(3), [0.1, 0.0, z]), cam)
    shift = np.argwhere(b.fg_mask)[:, 1].mean() - np.argwhere(a.fg_mask)[:, 1].mean()
    assert abs(shift - cam.fx * 0.1 / z) < 1.0


def test_render_out_of_frustum(cam, square):
    with pytest.raises(OutOfFrustum):
        render(square, Pose(np.eye(3), [0.0, 0.0, -1.0]), cam)


def test_render_closer_surface_wins(cam, square):
    front = render(square, Pose(np.eye(3), [0.0, 0.0, 0.6]), cam)
    assert front.depth[75, 75] == 600
    cyl = render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    # the near cap of the cylinder sits 6 cm in front of its center
    assert cyl.depth[75, 75] == 740


def test_sample_pose_pair_zero_ranges():
    prev, cur = sample_pose_pair(np.random.default_rng(0), 3, 16, DeltaRanges(0.0, 0.0))
    assert np.allclose(prev.matrix(), cur.matrix())


def test_sample_pose_pair_is_deterministic():
    a = sample_pose_pair(np.random.default_rng(5), 2, 16, DeltaRanges())
    b = sample_pose_pair(np.random.default_rng(5), 2, 16, DeltaRanges())
    assert np.array_equal(a[1].matrix(), b[1].matrix())


def test_sample_pose_pair_rejects_bad_viewpoint():
    with pytest.raises(ValueError):
        sample_pose_pair(np.random.default_rng(0), 16, 16, DeltaRanges())


def test_delta_components_are_uniform():
    ranges = DeltaRanges(0.02, 10.0)
    rng = np.random.default_rng(2024)
    trans, rot = [], []
    for k in range(10_000):
        prev, cur = sample_pose_pair(rng, k % 32, 32, ranges)
        delta = prev.inverse().compose(cur)
        trans.append(delta.trans)
        rot.append(euler_from_rot(delta.rot).as_array())
    trans, rot = np.array(trans), np.array(rot)
    for axis in range(3):
        assert stats.kstest(trans[:, axis], "uniform", args=(-0.02, 0.04)).statistic < 0.02
        assert stats.kstest(rot[:, axis], "uniform", args=(-10.0, 20.0)).statistic < 0.02


def test_draw_occlusion_branch_rates():
    cfg = AugmentConfig()
    rng = np.random.default_rng(11)
    branches = [draw_occlusion(cfg, rng) for _ in range(20_000)]
    none = sum(b == OcclusionBranch.NONE for b in branches) / len(branches)
    full = sum(b == OcclusionBranch.FULL for b in branches) / len(branches)
    assert none == pytest.approx(0.40, abs=0.02)
    assert full == pytest.approx(0.60 * 0.15, abs=0.01)


def test_composite_without_occluder(cam):
    rng = np.random.default_rng(0)
    obj = render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    out = composite(obj, procedural_background(cam, rng), None, AugmentConfig(), rng)
    assert np.array_equal(out.unoccl_mask, out.fg_mask)
    assert np.array_equal(out.depth[obj.fg_mask], obj.depth[obj.fg_mask])
    assert np.all(out.depth > 0)


def test_composite_full_occlusion(cam):
    rng = np.random.default_rng(1)
    obj = render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    occluder = render(ellipsoid(), Pose(np.eye(3), [0.1, 0.1, 0.5]), cam)
    out = composite(obj, procedural_background(cam, rng), occluder, AugmentConfig(), rng, branch=OcclusionBranch.FULL)
    assert out.fg_mask.any()
    assert not out.unoccl_mask.any()


def test_composite_occluder_behind_object(cam):
    rng = np.random.default_rng(2)
    obj = render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    occluder = render(ellipsoid().scaled(3.0), Pose(np.eye(3), [0.0, 0.0, 1.2]), cam)
    out = composite(obj, procedural_background(cam, rng), occluder, AugmentConfig(), rng, branch=OcclusionBranch.PARTIAL)
    assert np.array_equal(out.unoccl_mask, out.fg_mask)


def test_composite_partial_occlusion_bookkeeping(cam):
    rng = np.random.default_rng(3)
    obj = render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    occluder = render(ellipsoid(), Pose(np.eye(3), [0.03, 0.0, 0.5]), cam)
    out = composite(obj, procedural_background(cam, rng), occluder, AugmentConfig(), rng, branch=OcclusionBranch.PARTIAL)
    covered = obj.fg_mask & occluder.fg_mask
    assert covered.any()
    assert not out.unoccl_mask[covered].any()
    assert np.array_equal(out.unoccl_mask, obj.fg_mask & ~occluder.fg_mask)


def test_composite_size_mismatch(cam):
    rng = np.random.default_rng(0)
    obj = render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    small = procedural_background(Camera(width=100, height=100, cx=50, cy=50), rng)
    with pytest.raises(DimensionMismatch):
        composite(obj, small, None, AugmentConfig(), rng)


def test_kinect_noise_zero_is_identity(cam):
    frame = render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    out = kinect_noise(frame, Pose(np.eye(3), [0.0, 0.0, 0.8]), NoiseParams.zero(), np.random.default_rng(0))
    assert np.array_equal(out.depth, frame.depth)
    assert np.array_equal(out.rgb, frame.rgb)


def test_kinect_noise_constant_axial_sigma():
    frame = _flat_frame(np.full((320, 320), 1000))
    params = NoiseParams(axial_a0=0.005, axial_a1=0.0, axial_a2=0.0, axial_theta=0.0,
                         lateral_x0=0.0, lateral_x1=0.0, lateral_y0=0.0, lateral_y1=0.0)  # fmt: skip
    out = kinect_noise(frame, Pose.identity(), params, np.random.default_rng(4))
    deltas = out.depth.astype(float) - 1000.0
    assert 4.9 <= float(np.std(deltas)) <= 5.1


def test_kinect_noise_keeps_invalid_pixels(cam):
    frame = render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    pose = Pose(rot_from_euler(EulerXYZ(0.0, 30.0, 0.0)), [0.0, 0.0, 0.8])
    out = kinect_noise(frame, pose, NoiseParams(), np.random.default_rng(5))
    assert np.all(out.depth[frame.depth == 0] == 0)
    assert np.any(out.depth[frame.fg_mask] != frame.depth[frame.fg_mask])


def test_noise_sigmas_grow_with_angle():
    params = NoiseParams()
    assert params.sigma_axial(np.array([1.0]), 1.0)[0] > params.sigma_axial(np.array([1.0]), 0.0)[0]
    assert params.sigma_lateral(1.0)[0] > params.sigma_lateral(0.0)[0]
    assert params.sigma_lateral(0.0) == (0.8, 0.8)


def test_augment_identity(cam):
    rng = np.random.default_rng(6)
    frame = composite(
        render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam),
        procedural_background(cam, rng), None, AugmentConfig.identity(), rng,
    )  # fmt: skip
    out = augment_photometric(frame, AugmentConfig.identity(), rng)
    assert np.array_equal(out.rgb, frame.rgb)
    assert np.array_equal(out.depth, frame.depth)


def test_contrast_and_gamma_values():
    values = np.array([[[200, 10, 0]]], dtype=np.uint8)
    assert adjust_contrast(values, 2.0, 0.0)[0, 0, 0] == 255.0
    assert np.array_equal(adjust_contrast(values, 1.0, 0.0), values.astype(float))
    assert np.allclose(adjust_gamma(values, 1.0), values.astype(float))


def test_augment_always_contrast_clamps():
    cfg = AugmentConfig(
        p_occluder=0.0, p_contrast=1.0, alpha_range=(2.0, 2.0), beta_range=(0.0, 0.0), p_gamma=0.0,
        rgb_noise_sigma=0.0, hsv_noise_sigma=(0.0, 0.0, 0.0), blur_kernel=1,
        depth_downsample_factor=1, p_modality_dropout=0.0,
    )  # fmt: skip
    frame = _flat_frame(np.full((4, 4), 900))
    frame = frame.replace(rgb=np.full((4, 4, 3), 200, np.uint8))
    out = augment_photometric(frame, cfg, np.random.default_rng(0))
    assert np.all(out.rgb == 255)


def test_augment_depth_downsampling_keeps_validity(cam):
    frame = render(cylinder_mesh(), Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    cfg = AugmentConfig(p_contrast=0.0, p_gamma=0.0, p_modality_dropout=0.0, depth_downsample_factor=4)
    out = augment_photometric(frame, cfg, np.random.default_rng(1))
    assert np.all(out.depth[frame.depth == 0] == 0)
    assert np.array_equal(out.fg_mask, frame.fg_mask)


def test_generate_dataset_is_deterministic(cam):
    mesh = cylinder_mesh()
    cfg = DatasetConfig(n_viewpoints=8)
    a = generate_dataset(1, mesh, cam, cfg, master_seed=7)
    b = generate_dataset(1, mesh, cam, cfg, master_seed=7)
    assert np.array_equal(a[0].observed.rgb, b[0].observed.rgb)
    assert np.array_equal(a[0].observed.depth, b[0].observed.depth)
    assert np.array_equal(a[0].gt_delta.as_vector(), b[0].gt_delta.as_vector())


def test_generate_dataset_independent_of_workers(cam):
    mesh = cylinder_mesh()
    cfg = DatasetConfig(n_viewpoints=8)
    serial = generate_dataset(4, mesh, cam, cfg, master_seed=3, workers=1)
    threaded = generate_dataset(4, mesh, cam, cfg, master_seed=3, workers=3)
    for a, b in zip(serial, threaded):
        assert a.index == b.index
        assert np.array_equal(a.observed.depth, b.observed.depth)
        assert np.array_equal(a.observed.unoccl_mask, b.observed.unoccl_mask)


def test_gt_delta_recomposes_current_pose(cam):
    cfg = DatasetConfig(n_viewpoints=8)
    for sample in generate_dataset(5, cylinder_mesh(), cam, cfg, master_seed=1):
        recomposed = sample.pose_prev.compose(sample.gt_delta.to_pose(cfg.max_delta))
        assert np.allclose(recomposed.matrix(), sample.pose_cur.matrix(), atol=1e-7)


def test_quiet_dataset_observed_matches_predicted(cam, quiet_config):
    for sample in generate_dataset(3, cylinder_mesh(), cam, quiet_config, master_seed=2):
        both = sample.observed.fg_mask & sample.predicted.fg_mask
        assert both.any()
        assert np.array_equal(sample.observed.rgb[both], sample.predicted.rgb[both])
        assert np.array_equal(sample.observed.depth[both], sample.predicted.depth[both])


def test_masks_stay_nested_under_heavy_occlusion(cam):
    cfg = DatasetConfig(n_viewpoints=8, augment=AugmentConfig(p_occluder=1.0, p_full_occlusion=0.3))
    for sample in generate_dataset(12, cylinder_mesh(), cam, cfg, master_seed=9):
        assert not np.any(sample.observed.unoccl_mask & ~sample.observed.fg_mask)
        if sample.branch == OcclusionBranch.FULL:
            assert not sample.observed.unoccl_mask.any()


def test_dataset_round_trip(tmp_path, cam):
    mesh = cylinder_mesh()
    cfg = DatasetConfig(n_viewpoints=8)
    samples = generate_dataset(2, mesh, cam, cfg, master_seed=5)
    manifest_path = write_dataset(samples, tmp_path, mesh, cam, cfg, master_seed=5)
    assert manifest_path.name == "manifest.json"

    manifest, loaded = load_dataset(tmp_path)
    assert manifest["samples"] == 2
    assert manifest["master_seed"] == 5
    assert len(manifest["lambda_gs"]) == 3
    for original, back in zip(samples, loaded):
        assert np.array_equal(original.observed.rgb, back.observed.rgb)
        assert np.array_equal(original.observed.depth, back.observed.depth)
        assert np.array_equal(original.predicted.fg_mask, back.predicted.fg_mask)
        assert np.array_equal(original.observed.unoccl_mask, back.observed.unoccl_mask)
        assert np.array_equal(original.gt_delta.as_vector(), back.gt_delta.as_vector())
        assert back.branch == original.branch


def test_write_dataset_is_byte_identical(tmp_path, cam):
    mesh = cylinder_mesh()
    cfg = DatasetConfig(n_viewpoints=8)
    for name in ("a", "b"):
        write_dataset(generate_dataset(1, mesh, cam, cfg, master_seed=7), tmp_path / name, mesh, cam, cfg, 7)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError):
        read_manifest(tmp_path)


def test_missing_sample_file(tmp_path, cam):
    mesh = cylinder_mesh()
    cfg = DatasetConfig(n_viewpoints=8)
    write_dataset(generate_dataset(1, mesh, cam, cfg, master_seed=0), tmp_path, mesh, cam, cfg, 0)
    (tmp_path / "depth_0.pgm").unlink()
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


@pytest.mark.parametrize("kwargs", [{"fx": 0.0}, {"near": 2.0, "far": 1.0}, {"width": 0}])
def test_camera_validation(kwargs):
    with pytest.raises(ValueError):
        Camera(**kwargs)


def test_frame_rejects_unoccluded_outside_foreground():
    fg = np.zeros((2, 2), bool)
    unoccl = np.ones((2, 2), bool)
    with pytest.raises(ValueError):
        RgbdFrame(np.zeros((2, 2, 3), np.uint8), np.zeros((2, 2), np.uint16), fg, unoccl)


def _extent(mask, axis):
    covered = np.flatnonzero(mask.any(axis=axis))
    return int(covered[-1] - covered[0] + 1)


def test_doubling_distance_halves_mask_diameter(cam, square):
    near = render(square, Pose(np.eye(3), [0.0, 0.0, 0.4]), cam)
    far = render(square, Pose(np.eye(3), [0.0, 0.0, 0.8]), cam)
    for axis in (0, 1):
        assert abs(_extent(far.fg_mask, axis) - _extent(near.fg_mask, axis) / 2.0) <= 2.0


def test_depth_validity_survives_the_whole_pipeline(cam):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        pose = Pose(random_rotation(rng, 0.5), [0.0, 0.0, 0.8])
        obj = render(cylinder_mesh(), pose, cam)
        occluder = render(ellipsoid(), Pose(np.eye(3), [0.05, 0.0, 0.55]), cam)
        background = procedural_background(cam, rng)
        holes = np.zeros(background.depth.shape, dtype=bool)
        holes[:, :30] = True
        holes[100:, :] = True
        background = background.replace(depth=np.where(holes, 0, background.depth))

        frame = composite(obj, background, occluder, AugmentConfig(), rng)
        invalid = frame.depth == 0
        assert invalid.any()
        frame = kinect_noise(frame, pose, NoiseParams(), rng)
        assert np.all(frame.depth[invalid] == 0)
        frame = augment_photometric(frame, AugmentConfig(p_modality_dropout=0.0), rng)
        assert np.all(frame.depth[invalid] == 0)
        assert not np.any(frame.unoccl_mask & ~frame.fg_mask)
