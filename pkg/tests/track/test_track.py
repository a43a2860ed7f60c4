import csv
import json

import numpy as np
import pytest

from posetrack.fit import ToyRegressor
from posetrack.geom import Rot6D, cylinder_mesh, euler_from_rot
from posetrack.losses import PoseDelta9
from posetrack.symmetry import ReflectiveConfig
from posetrack.synth import Camera
from posetrack.track import (
    CSV_COLUMNS,
    FAILURE_DEFINITION,
    SCENARIO_FRAMES,
    SCENARIOS,
    BiasEstimator,
    FlipInjector,
    ModelEstimator,
    NoiseEstimator,
    OracleEstimator,
    TrackPolicy,
    TrackReport,
    build_scenario,
    emit_report,
    metrics,
    occlude_band,
    pick_flip_frames,
    run_benchmark,
    run_track,
)
from posetrack.utils.errors import ReportIoError


@pytest.fixture
def policy():
    """Default policy: resets every 15 frames, no reflective filter."""
    return TrackPolicy()


@pytest.fixture
def translation_traj():
    """The translation-only scenario at full length."""
    return build_scenario("translation_only", seed=0)


@pytest.fixture
def flip_traj():
    """The flip-injection scenario at full length."""
    return build_scenario("flip_injection", seed=3)


class _DegenerateEstimator:
    name = "degenerate"

    def __call__(self, k, observed, prior, repass=False):
        return PoseDelta9(np.zeros(3), Rot6D([0.0, 0.0, 0.0], [0.0, 1.0, 0.0]))


def test_scenarios_are_seeded():
    for name in SCENARIOS:
        a = build_scenario(name, seed=5, n_frames=30)
        b = build_scenario(name, seed=5, n_frames=30)
        assert len(a) == 30
        assert a.scenario_name == name
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.pose.matrix(), fb.pose.matrix())


def test_scenarios_differ_by_seed():
    a = build_scenario("rotation_only", seed=1, n_frames=10)
    b = build_scenario("rotation_only", seed=2, n_frames=10)
    assert not np.array_equal(a.pose(0).rot, b.pose(0).rot)


def test_unknown_scenario():
    with pytest.raises(ValueError):
        build_scenario("juggling", seed=0)


def test_default_length(translation_traj):
    assert len(translation_traj) == SCENARIO_FRAMES
    assert translation_traj.frames[0].observed is None


def test_translation_only_keeps_rotation(translation_traj):
    first = translation_traj.pose(0).rot
    assert all(np.array_equal(f.pose.rot, first) for f in translation_traj.frames)


def test_flip_frames_fall_in_distinct_windows(flip_traj, policy):
    flips = flip_traj.flip_frames
    assert len(flips) == 3
    windows = {k // policy.reset_interval for k in flips}
    assert len(windows) == 3
    assert all(k % policy.reset_interval != 0 for k in flips)


def test_pick_flip_frames_short_trajectory():
    assert pick_flip_frames(np.random.default_rng(0), 20, 15) == pick_flip_frames(np.random.default_rng(0), 20, 15)
    assert len(pick_flip_frames(np.random.default_rng(0), 20, 15)) == 1


def test_flip_scenario_holds_x_angle(flip_traj):
    xs = [euler_from_rot(f.pose.rot).x for f in flip_traj.frames]
    assert np.allclose(xs, xs[0], atol=1e-9)


def test_rendered_occlusion_ramp():
    traj = build_scenario("occlusion_ramp", seed=0, n_frames=12, mesh=cylinder_mesh(), cam=Camera())
    first, last = traj.frames[0], traj.frames[-1]
    assert first.occlusion == 0.0
    assert last.occlusion == pytest.approx(0.75)
    assert np.array_equal(first.observed.unoccl_mask, first.observed.fg_mask)
    assert last.observed.unoccl_mask.sum() < last.observed.fg_mask.sum()


def test_occlude_band():
    traj = build_scenario("translation_only", seed=0, n_frames=1, mesh=cylinder_mesh())
    frame = traj.frames[0].observed
    assert occlude_band(frame, 0.0) is frame
    covered = occlude_band(frame, 0.5)
    assert np.array_equal(covered.fg_mask, frame.fg_mask)
    assert not np.any(covered.unoccl_mask & ~covered.fg_mask)
    hidden = frame.fg_mask & ~covered.unoccl_mask
    assert hidden.any()
    assert np.all(covered.depth[hidden] < frame.depth[hidden])


def test_oracle_tracks_exactly(translation_traj, policy):
    report = run_track(translation_traj, OracleEstimator(translation_traj), policy)
    assert len(report) == 200
    assert max(report.trans_err_mm) < 1e-6
    assert max(report.rot_err_deg) < 1e-3
    assert report.failures == 0
    assert report.reset_frames == list(range(15, 200, 15))
    assert len(report.reset_frames) == 13


def test_oracle_on_every_scenario(policy):
    for name in SCENARIOS:
        traj = build_scenario(name, seed=1, n_frames=60)
        report = run_track(traj, OracleEstimator(traj), policy)
        assert max(report.trans_err_mm) < 1e-6, name
        assert report.failures == 0, name


def test_bias_error_ramps_between_resets(translation_traj, policy):
    report = run_track(translation_traj, BiasEstimator(translation_traj, bias_mm=(10.0, 0.0, 0.0)), policy)
    assert report.trans_err_mm[0] == 0.0
    assert np.allclose(report.trans_err_mm[1:15], 10.0 * np.arange(1, 15), atol=1e-6)
    assert report.trans_err_mm[15] == 0.0
    assert report.trans_err_mm[16] == pytest.approx(10.0, abs=1e-6)
    assert report.failures == 13
    assert report.failure_frames == report.reset_frames


def test_noise_estimator_is_seeded(translation_traj, policy):
    a = run_track(translation_traj, NoiseEstimator(translation_traj, seed=4), policy)
    b = run_track(translation_traj, NoiseEstimator(translation_traj, seed=4), policy)
    assert a.trans_err_mm == b.trans_err_mm
    assert 0.0 < metrics(a)["trans_err_mm"]["mean"] < 30.0


def test_unfiltered_flip_fails_its_window(flip_traj, policy):
    estimator = FlipInjector(OracleEstimator(flip_traj), flip_traj.flip_frames)
    assert estimator.name == "oracle+flip"
    report = run_track(flip_traj, estimator, policy)
    for k in flip_traj.flip_frames:
        assert report.rot_err_deg[k] == pytest.approx(180.0, abs=1e-3)
    assert report.failures == 3


def test_reflective_filter_recovers_flips(flip_traj):
    estimator = FlipInjector(OracleEstimator(flip_traj), flip_traj.flip_frames)
    report = run_track(flip_traj, estimator, TrackPolicy(reflective=ReflectiveConfig()))
    for k in flip_traj.flip_frames:
        assert report.rot_err_deg[k] < 1e-3
    assert report.failures == 0
    assert report.repasses == 3


def test_reflective_filter_without_repasses(flip_traj):
    estimator = FlipInjector(OracleEstimator(flip_traj), flip_traj.flip_frames)
    policy = TrackPolicy(reflective=ReflectiveConfig(max_repasses=0))
    report = run_track(flip_traj, estimator, policy)
    assert report.repasses == 0
    assert report.failures == 0


def test_filter_never_adds_failures(policy):
    for seed in range(3):
        traj = build_scenario("flip_injection", seed=seed, n_frames=90)

        def make():
            return FlipInjector(BiasEstimator(traj, bias_mm=(1.0, 0.0, 0.0)), traj.flip_frames)

        off = run_track(traj, make(), policy)
        on = run_track(traj, make(), TrackPolicy(reflective=ReflectiveConfig()))
        assert off.failures == 3
        assert on.failures == 0


def test_estimator_errors_carry_state(translation_traj, policy):
    report = run_track(translation_traj, _DegenerateEstimator(), policy)
    expected = [k for k in range(1, 200)]
    assert report.failed_frames == expected
    assert report.trans_err_mm[0] == 0.0
    assert report.trans_err_mm[1] > 0.0


def test_model_estimator_needs_observed_frames(translation_traj, policy):
    model = ToyRegressor.create(init="zeros")
    report = run_track(translation_traj, ModelEstimator(model, cylinder_mesh()), policy)
    assert report.failed_frames == list(range(1, 200))


def test_model_estimator_on_rendered_frames(policy):
    traj = build_scenario("translation_only", seed=0, n_frames=5, mesh=cylinder_mesh())
    report = run_track(traj, ModelEstimator(ToyRegressor.create(init="zeros"), cylinder_mesh()), policy)
    assert report.failed_frames == []
    assert report.estimator == "model"
    assert len(report) == 5


def test_reset_interval_longer_than_trajectory():
    traj = build_scenario("translation_only", seed=0, n_frames=10)
    report = run_track(traj, OracleEstimator(traj), TrackPolicy(reset_interval=50))
    assert report.reset_frames == []


@pytest.mark.parametrize("kwargs", [{"reset_interval": 0}, {"fail_trans_mm": 0.0}, {"fail_rot_deg": -1.0}, {"max_delta": 0.0}])
def test_policy_validation(kwargs):
    with pytest.raises(ValueError):
        TrackPolicy(**kwargs)


def test_metrics_exclude_reset_frames():
    report = TrackReport(
        "s", "e",
        trans_err_mm=[0.0, 1.0, 2.0, 3.0, 0.0],
        rot_err_deg=[0.0, 0.5, 0.5, 0.5, 0.0],
        euler_z_err_deg=[0.0] * 5,
        reset_frames=[4],
        failure_frames=[4],
    )  # fmt: skip
    m = metrics(report)
    assert m["trans_err_mm"]["mean"] == pytest.approx(1.5)
    assert m["trans_err_mm"]["std"] == pytest.approx(np.std([0.0, 1.0, 2.0, 3.0], ddof=1))
    assert m["frames"] == 5
    assert m["resets"] == 1
    assert m["failures"] == 1


def test_metrics_of_empty_report():
    with pytest.raises(ValueError):
        metrics(TrackReport("s", "e"))


def test_emit_csv(tmp_path, translation_traj, policy):
    report = run_track(translation_traj, BiasEstimator(translation_traj), policy)
    path = emit_report(report, "csv", tmp_path / "track.csv")
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == CSV_COLUMNS
    assert len(rows) == 201
    assert rows[16][3] == "1" and rows[16][4] == "1"
    assert float(rows[3][1]) == report.trans_err_mm[2]


def test_emit_csv_of_empty_report(tmp_path):
    path = emit_report(TrackReport("s", "e"), "csv", tmp_path / "empty.csv")
    assert path.read_text().splitlines() == [",".join(CSV_COLUMNS)]


def test_emit_json_round_trip(tmp_path, translation_traj, policy):
    report = run_track(translation_traj, BiasEstimator(translation_traj), policy)
    path = emit_report(report, "json", tmp_path / "track.json")
    data = json.loads(path.read_text())
    assert data["metadata"]["failure_definition"] == FAILURE_DEFINITION
    assert data["metadata"]["policy"]["reset_interval"] == 15
    assert data["summary"]["failures"] == 13
    assert len(data["frames"]) == 200
    back = TrackReport.from_json(data)
    assert back.trans_err_mm == report.trans_err_mm
    assert back.failure_frames == report.failure_frames
    assert back.policy == report.policy


def test_emit_errors(tmp_path):
    report = TrackReport("s", "e")
    with pytest.raises(ValueError):
        emit_report(report, "xml", tmp_path / "r.xml")
    with pytest.raises(ReportIoError):
        emit_report(report, "json", tmp_path / "missing" / "r.json")


def test_benchmark_runs_scenarios_in_order(policy):
    reports = run_benchmark(["rotation_only", "translation_only"], OracleEstimator, policy, seed=2, n_frames=30)
    assert [r.scenario for r in reports] == ["rotation_only", "translation_only"]
    assert all(r.failures == 0 for r in reports)
