"""
Tracking-loop harness: scripted benchmark trajectories, pluggable
estimators, previous-pose feedback with reflective filtering and re-passes,
periodic resets with failure counting, metrics and report files.
"""

import asyncio
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from posetrack.fit import ToyRegressor, forward, frame_features
from posetrack.geom import (
    EulerXYZ,
    Pose,
    TriMesh,
    axis_rotation,
    euler_from_rot,
    geodesic_distance,
    random_rotation,
    rot6d_from_matrix,
    rot_from_euler,
)
from posetrack.losses import PoseDelta9
from posetrack.symmetry import ReflectiveConfig, euler_z_err_deg, reflective_filter
from posetrack.synth import Camera, RgbdFrame, render
from posetrack.utils.common_types import ReportFormat
from posetrack.utils.config import config
from posetrack.utils.errors import DegenerateInput, DimensionMismatch, OutOfFrustum, ReportIoError
from posetrack.utils.helper import validate_positive_int

logger = logging.getLogger(f"{config.LOGGER_NAME}.track")

SCENARIO_FRAMES = 200
FAILURE_DEFINITION = (
    "a reset window fails when the error just before the reset exceeds "
    "fail_trans_mm or fail_rot_deg"
)
CSV_COLUMNS = ["frame", "trans_err_mm", "rot_err_deg", "reset", "failure"]


@dataclass(frozen=True)
class TrajectoryFrame:
    pose: Pose
    observed: Optional[RgbdFrame] = None
    occlusion: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    frames: Tuple[TrajectoryFrame, ...]
    scenario_name: str
    flip_frames: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("A trajectory needs at least one frame.")
        shapes = {f.observed.depth.shape for f in frames if f.observed is not None}
        if len(shapes) > 1:
            raise DimensionMismatch("Trajectory frames differ in size.")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "flip_frames", tuple(int(k) for k in self.flip_frames))

    def __len__(self) -> int:
        return len(self.frames)

    def pose(self, k: int) -> Pose:
        return self.frames[k].pose


@dataclass(frozen=True)
class TrackPolicy:
    reset_interval: int = config.RESET_INTERVAL
    fail_trans_mm: float = config.FAIL_TRANS_MM
    fail_rot_deg: float = config.FAIL_ROT_DEG
    reflective: Optional[ReflectiveConfig] = None
    max_delta: float = config.MAX_DELTA_TRANS

    def __post_init__(self) -> None:
        validate_positive_int(self.reset_interval, "reset_interval")
        if self.fail_trans_mm <= 0.0 or self.fail_rot_deg <= 0.0:
            raise ValueError("Failure thresholds must be positive.")
        if self.max_delta <= 0.0:
            raise ValueError("max_delta must be positive.")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "reset_interval": self.reset_interval,
            "fail_trans_mm": self.fail_trans_mm,
            "fail_rot_deg": self.fail_rot_deg,
            "reflective": None if self.reflective is None else {
                "threshold_deg": self.reflective.threshold_deg,
                "max_repasses": self.reflective.max_repasses,
            },
            "max_delta": self.max_delta,
        }  # fmt: skip


# -- scenarios --------------------------------------------------------------------


def _base_pose(rng: np.random.Generator) -> Pose:
    return Pose(random_rotation(rng), np.array([0.0, 0.0, 0.8]))


def _translation_only(rng: np.random.Generator, n: int) -> Tuple[List[Pose], List[float]]:
    base = _base_pose(rng)
    phase = rng.uniform(0.0, 2.0 * math.pi, 3)
    k = np.arange(n)[:, None]
    offsets = 0.05 * np.sin(2.0 * math.pi * k / 50.0 + phase)
    return [Pose(base.rot, base.trans + o) for o in offsets], [0.0] * n


def _euler_path(rng: np.random.Generator, n: int, amplitude_deg: Sequence[float], period: float) -> np.ndarray:
    center = np.array([rng.uniform(-60.0, 60.0), rng.uniform(-30.0, 30.0), rng.uniform(-60.0, 60.0)])
    phase = rng.uniform(0.0, 2.0 * math.pi, 3)
    k = np.arange(n)[:, None]
    return center + np.asarray(amplitude_deg) * np.sin(2.0 * math.pi * k / period + phase)


def _rotation_only(rng: np.random.Generator, n: int) -> Tuple[List[Pose], List[float]]:
    angles = _euler_path(rng, n, (30.0, 20.0, 30.0), 60.0)
    trans = np.array([0.0, 0.0, 0.8])
    return [Pose(rot_from_euler(EulerXYZ(*a)), trans) for a in angles], [0.0] * n


def _occlusion_ramp(rng: np.random.Generator, n: int) -> Tuple[List[Pose], List[float]]:
    angles = _euler_path(rng, n, (10.0, 10.0, 10.0), 80.0)
    k = np.arange(n)[:, None]
    trans = np.array([0.0, 0.0, 0.8]) + 0.03 * np.sin(2.0 * math.pi * k / 80.0 + rng.uniform(0.0, 2.0 * math.pi, 3))
    poses = [Pose(rot_from_euler(EulerXYZ(*a)), t) for a, t in zip(angles, trans)]
    return poses, list(np.linspace(0.0, 0.75, n))


def _hard_interaction(rng: np.random.Generator, n: int) -> Tuple[List[Pose], List[float]]:
    angles = np.array([rng.uniform(-60.0, 60.0), rng.uniform(-30.0, 30.0), rng.uniform(-60.0, 60.0)])
    trans = np.array([0.0, 0.0, 0.8])
    poses, occlusion = [], []
    for _ in range(n):
        poses.append(Pose(rot_from_euler(EulerXYZ(*angles)), trans.copy()))
        occlusion.append(float(rng.uniform(0.0, 0.5)))
        step = rng.uniform(-0.010, 0.010, 3)
        # reflect the walk back inside the working volume
        bounds = np.array([0.08, 0.08, 0.2])
        center = np.array([0.0, 0.0, 0.8])
        nxt = trans + step
        outside = np.abs(nxt - center) > bounds
        step[outside] = -step[outside]
        trans = trans + step
        angles = angles + rng.uniform(-4.0, 4.0, 3)
        angles[1] = float(np.clip(angles[1], -60.0, 60.0))
    return poses, occlusion


def _flip_injection(rng: np.random.Generator, n: int) -> Tuple[List[Pose], List[float]]:
    # x held fixed so a rejected x flip is replaced by the exact angle
    center = np.array([rng.uniform(-30.0, 30.0), rng.uniform(-20.0, 20.0), rng.uniform(-40.0, 40.0)])
    phase = rng.uniform(0.0, 2.0 * math.pi, 2)
    poses = []
    for k in range(n):
        wobble = 8.0 * np.sin(2.0 * math.pi * k / 40.0 + phase)
        angles = center + np.array([0.0, wobble[0], wobble[1]])
        trans = np.array([0.0, 0.0, 0.8]) + 0.01 * np.array([math.sin(k / 7.0), math.cos(k / 9.0), 0.0])
        poses.append(Pose(rot_from_euler(EulerXYZ(*angles)), trans))
    return poses, [0.0] * n


SCENARIOS: Dict[str, Callable[[np.random.Generator, int], Tuple[List[Pose], List[float]]]] = {
    "translation_only": _translation_only,
    "rotation_only": _rotation_only,
    "occlusion_ramp": _occlusion_ramp,
    "hard_interaction": _hard_interaction,
    "flip_injection": _flip_injection,
}


def pick_flip_frames(rng: np.random.Generator, n_frames: int, reset_interval: int, count: int = 3) -> Tuple[int, ...]:
    """One flip in each of ``count`` distinct reset windows, away from the window edges."""
    windows = [w for w in range(n_frames // reset_interval) if (w + 1) * reset_interval < n_frames]
    chosen = rng.choice(windows, size=min(count, len(windows)), replace=False)
    frames = [int(w * reset_interval + rng.integers(2, max(reset_interval - 2, 3))) for w in chosen]
    return tuple(sorted(frames))


def occlude_band(frame: RgbdFrame, fraction: float) -> RgbdFrame:
    """Cover the left ``fraction`` of the object silhouette with a flat occluder in front of it."""
    if fraction <= 0.0 or not frame.fg_mask.any():
        return frame
    xs = np.nonzero(frame.fg_mask.any(axis=0))[0]
    cut = xs.min() + int(round(fraction * (xs.max() - xs.min() + 1)))
    band = np.zeros_like(frame.fg_mask)
    band[:, xs.min() : cut] = True
    covered = band & frame.fg_mask
    front = max(int(frame.depth[frame.fg_mask].min()) - 20, 1)
    rgb = frame.rgb.copy()
    depth = frame.depth.copy()
    rgb[covered] = (215, 165, 140)
    depth[covered] = front
    return RgbdFrame(rgb, depth, frame.fg_mask, frame.fg_mask & ~covered)


def build_scenario(
    name: str,
    seed: int,
    n_frames: int = SCENARIO_FRAMES,
    mesh: Optional[TriMesh] = None,
    cam: Optional[Camera] = None,
    reset_interval: int = config.RESET_INTERVAL,
) -> Trajectory:
    """
    Build a seeded benchmark trajectory. Observed frames are rendered only
    when a mesh is given.

    :raises ValueError: If the scenario is unknown.
    """
    if name not in SCENARIOS:
        raise ValueError(f"Unknown scenario '{name}'. Choose from {sorted(SCENARIOS)}.")
    validate_positive_int(n_frames, "n_frames")
    rng = np.random.default_rng([seed, list(SCENARIOS).index(name)])
    poses, occlusion = SCENARIOS[name](rng, n_frames)
    flips = pick_flip_frames(rng, n_frames, reset_interval) if name == "flip_injection" else ()

    frames = []
    for pose, occ in zip(poses, occlusion):
        observed = None
        if mesh is not None:
            observed = occlude_band(render(mesh, pose, cam or Camera()), occ)
        frames.append(TrajectoryFrame(pose, observed, float(occ)))
    return Trajectory(tuple(frames), name, flips)


# -- estimators ---------------------------------------------------------------------


class Estimator(Protocol):
    """
    Produces the relative pose from ``prior`` to frame ``k``. A re-pass
    call asks again from a corrected prior.
    """

    name: str

    def __call__(self, k: int, observed: Optional[RgbdFrame], prior: Pose, repass: bool = False) -> PoseDelta9: ...


def _encode(delta: Pose, max_delta: float) -> PoseDelta9:
    return PoseDelta9.from_pose(delta, max_delta)


@dataclass
class OracleEstimator:
    """Returns the exact ground-truth increment, or the exact residual on a re-pass."""

    trajectory: Trajectory
    max_delta: float = config.MAX_DELTA_TRANS
    name: str = "oracle"

    def truth(self, k: int, prior: Pose, repass: bool) -> Pose:
        if repass or k == 0:
            return prior.inverse().compose(self.trajectory.pose(k))
        return self.trajectory.pose(k - 1).inverse().compose(self.trajectory.pose(k))

    def __call__(self, k: int, observed: Optional[RgbdFrame], prior: Pose, repass: bool = False) -> PoseDelta9:
        return _encode(self.truth(k, prior, repass), self.max_delta)


@dataclass
class BiasEstimator(OracleEstimator):
    """Ground-truth increment plus a constant translation bias in millimeters."""

    bias_mm: Tuple[float, float, float] = (10.0, 0.0, 0.0)
    name: str = "bias"

    def __call__(self, k: int, observed: Optional[RgbdFrame], prior: Pose, repass: bool = False) -> PoseDelta9:
        delta = self.truth(k, prior, repass)
        biased = Pose(delta.rot, delta.trans + np.asarray(self.bias_mm, dtype=float) / 1000.0)
        return _encode(biased, self.max_delta)


@dataclass
class NoiseEstimator(OracleEstimator):
    """Ground-truth increment with Gaussian translation and Euler-angle noise."""

    sigma_trans_mm: float = 2.0
    sigma_rot_deg: float = 1.0
    seed: int = 0
    name: str = "noise"
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng(self.seed)

    def __call__(self, k: int, observed: Optional[RgbdFrame], prior: Pose, repass: bool = False) -> PoseDelta9:
        delta = self.truth(k, prior, repass)
        noise_rot = rot_from_euler(EulerXYZ(*self._rng.normal(0.0, self.sigma_rot_deg, 3)))
        noise_trans = self._rng.normal(0.0, self.sigma_trans_mm, 3) / 1000.0
        return _encode(Pose(delta.rot @ noise_rot, delta.trans + noise_trans), self.max_delta)


@dataclass
class ModelEstimator:
    """Renders the prior, extracts frame-pair features and runs the toy regressor."""

    model: ToyRegressor
    mesh: TriMesh
    cam: Camera = field(default_factory=Camera)
    max_delta: float = config.MAX_DELTA_TRANS
    name: str = "model"

    def __call__(self, k: int, observed: Optional[RgbdFrame], prior: Pose, repass: bool = False) -> PoseDelta9:
        if observed is None:
            raise ValueError("The model estimator needs rendered observed frames.")
        predicted = render(self.mesh, prior, self.cam)
        return forward(self.model, frame_features(observed, predicted, self.max_delta))


@dataclass
class FlipInjector:
    """
    Wraps an estimator and turns its first-pass estimate at the listed
    frames upside down (180 degrees about the camera x axis).
    """

    inner: Estimator
    flip_frames: Sequence[int]
    max_delta: float = config.MAX_DELTA_TRANS

    @property
    def name(self) -> str:
        return f"{self.inner.name}+flip"

    def __call__(self, k: int, observed: Optional[RgbdFrame], prior: Pose, repass: bool = False) -> PoseDelta9:
        delta = self.inner(k, observed, prior, repass)
        if repass or k not in self.flip_frames:
            return delta
        logger.debug("Injecting a flip at frame %d", k)
        d_rot = prior.rot.T @ axis_rotation(0, math.pi) @ prior.rot @ delta.to_pose(self.max_delta).rot
        return PoseDelta9(delta.trans, rot6d_from_matrix(d_rot))


# -- harness ------------------------------------------------------------------------


@dataclass
class TrackReport:
    scenario: str
    estimator: str
    trans_err_mm: List[float] = field(default_factory=list)
    rot_err_deg: List[float] = field(default_factory=list)
    euler_z_err_deg: List[float] = field(default_factory=list)
    reset_frames: List[int] = field(default_factory=list)
    failure_frames: List[int] = field(default_factory=list)
    failed_frames: List[int] = field(default_factory=list)
    repasses: int = 0
    policy: Dict[str, Any] = field(default_factory=dict)

    @property
    def failures(self) -> int:
        return len(self.failure_frames)

    def __len__(self) -> int:
        return len(self.trans_err_mm)

    def to_json(self) -> Dict[str, Any]:
        resets, fails = set(self.reset_frames), set(self.failure_frames)
        return {
            "scenario": self.scenario,
            "estimator": self.estimator,
            "frames": [
                {
                    "frame": k,
                    "trans_err_mm": self.trans_err_mm[k],
                    "rot_err_deg": self.rot_err_deg[k],
                    "euler_z_err_deg": self.euler_z_err_deg[k],
                    "reset": int(k in resets),
                    "failure": int(k in fails),
                }
                for k in range(len(self))
            ],
            "reset_frames": list(self.reset_frames),
            "failure_frames": list(self.failure_frames),
            "failed_frames": list(self.failed_frames),
            "repasses": self.repasses,
            "summary": metrics(self) if len(self) else {},
            "metadata": {"failure_definition": FAILURE_DEFINITION, "policy": self.policy},
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "TrackReport":
        frames = data["frames"]
        return cls(
            scenario=data["scenario"],
            estimator=data["estimator"],
            trans_err_mm=[f["trans_err_mm"] for f in frames],
            rot_err_deg=[f["rot_err_deg"] for f in frames],
            euler_z_err_deg=[f["euler_z_err_deg"] for f in frames],
            reset_frames=list(data["reset_frames"]),
            failure_frames=list(data["failure_frames"]),
            failed_frames=list(data["failed_frames"]),
            repasses=int(data["repasses"]),
            policy=dict(data["metadata"]["policy"]),
        )


def _errors(state: Pose, gt: Pose) -> Tuple[float, float, float]:
    trans_mm = float(np.linalg.norm(state.trans - gt.trans) * 1000.0)
    rot_deg = math.degrees(geodesic_distance(state.rot, gt.rot))
    return trans_mm, rot_deg, euler_z_err_deg(state.rot, gt.rot)


def _apply_reflective(
    state: Pose,
    composed: Pose,
    k: int,
    traj: Trajectory,
    estimator: Estimator,
    cfg: ReflectiveConfig,
    max_delta: float,
) -> Tuple[Pose, int]:
    prev_euler = euler_from_rot(state.rot)
    repasses = 0
    for attempt in range(cfg.max_repasses + 1):
        filtered, flags = reflective_filter(prev_euler, euler_from_rot(composed.rot), cfg)
        if not any(flags):
            return composed, repasses
        candidate = Pose(rot_from_euler(filtered), composed.trans)
        if attempt == cfg.max_repasses:
            return candidate, repasses
        logger.debug("Frame %d: flags %s, re-pass %d", k, flags, attempt + 1)
        delta = estimator(k, traj.frames[k].observed, candidate, repass=True)
        composed = candidate.compose(delta.to_pose(max_delta))
        repasses += 1
    return composed, repasses


def run_track(traj: Trajectory, estimator: Estimator, policy: TrackPolicy) -> TrackReport:
    """
    Run the tracker over a trajectory.

    The state starts at the ground truth of frame 0. Each later frame asks
    the estimator for a relative pose from the current state, composes it,
    and optionally filters reflective flips. Every ``reset_interval`` frames
    the state is re-initialized to ground truth and the window counts as a
    failure when the error just before the reset exceeds a threshold.

    :return: TrackReport
    """
    report = TrackReport(traj.scenario_name, getattr(estimator, "name", type(estimator).__name__), policy=policy.to_dict())
    state = traj.pose(0)
    report.trans_err_mm.append(0.0)
    report.rot_err_deg.append(0.0)
    report.euler_z_err_deg.append(0.0)

    for k in range(1, len(traj)):
        gt = traj.pose(k)
        try:
            delta = estimator(k, traj.frames[k].observed, state)
            composed = state.compose(delta.to_pose(policy.max_delta))
            if policy.reflective is not None:
                composed, used = _apply_reflective(state, composed, k, traj, estimator, policy.reflective, policy.max_delta)
                report.repasses += used
            state = composed
        except (DegenerateInput, DimensionMismatch, OutOfFrustum, ValueError) as e:
            logger.debug("Estimator failed at frame %d: %s", k, e)
            report.failed_frames.append(k)

        trans_mm, rot_deg, z_deg = _errors(state, gt)
        if k % policy.reset_interval == 0:
            if trans_mm > policy.fail_trans_mm or rot_deg > policy.fail_rot_deg:
                report.failure_frames.append(k)
            report.reset_frames.append(k)
            state = gt
            trans_mm, rot_deg, z_deg = 0.0, 0.0, 0.0
        report.trans_err_mm.append(trans_mm)
        report.rot_err_deg.append(rot_deg)
        report.euler_z_err_deg.append(z_deg)

    logger.info(
        "%s/%s: %d frames, %d resets, %d failures",
        report.scenario, report.estimator, len(report), len(report.reset_frames), report.failures,
    )  # fmt: skip
    return report


def _mean_std(values: np.ndarray) -> Dict[str, float]:
    if values.size == 0:
        return {"mean": 0.0, "std": 0.0}
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return {"mean": float(np.mean(values)), "std": std}


def metrics(report: TrackReport) -> Dict[str, Any]:
    """
    Mean and sample standard deviation of each per-frame error, reset
    frames excluded, plus reset and failure counts.

    :raises ValueError: For an empty report.
    """
    if len(report) == 0:
        raise ValueError("Metrics need a nonempty report.")
    keep = np.ones(len(report), dtype=bool)
    keep[[k for k in report.reset_frames if k < len(report)]] = False
    return {
        "trans_err_mm": _mean_std(np.asarray(report.trans_err_mm)[keep]),
        "rot_err_deg": _mean_std(np.asarray(report.rot_err_deg)[keep]),
        "euler_z_err_deg": _mean_std(np.asarray(report.euler_z_err_deg)[keep]),
        "frames": len(report),
        "resets": len(report.reset_frames),
        "failures": report.failures,
    }


def emit_report(report: TrackReport, fmt: ReportFormat, path: Union[str, Path]) -> Path:
    """
    Write a report as JSON (with summary and metadata) or CSV (one row per
    frame).

    :raises ReportIoError: If the file cannot be written.
    :raises ValueError: For an unknown format.
    """
    if fmt not in ("json", "csv"):
        raise ValueError(f"Unknown report format '{fmt}'.")
    path = Path(path)
    try:
        if fmt == "json":
            path.write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
        else:
            resets, fails = set(report.reset_frames), set(report.failure_frames)
            with open(path, "w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle)
                writer.writerow(CSV_COLUMNS)
                for k in range(len(report)):
                    writer.writerow(
                        [k, repr(report.trans_err_mm[k]), repr(report.rot_err_deg[k]), int(k in resets), int(k in fails)]
                    )
    except OSError as e:
        raise ReportIoError(f"Could not write report '{path}': {e}")
    return path


def run_benchmark(
    scenarios: Sequence[str],
    estimator_factory: Callable[[Trajectory], Estimator],
    policy: TrackPolicy,
    seed: int = 0,
    n_frames: int = SCENARIO_FRAMES,
    mesh: Optional[TriMesh] = None,
    cam: Optional[Camera] = None,
    async_mode: bool = False,
) -> Union[List[TrackReport], Awaitable[List[TrackReport]]]:
    """
    Run several scenarios with independent state.

    If async_mode=False, returns the reports in scenario order.
    If async_mode=True, returns an awaitable that runs each scenario in a
    worker thread and resolves to the same list.
    """

    def run_one(name: str) -> TrackReport:
        traj = build_scenario(name, seed, n_frames, mesh, cam, policy.reset_interval)
        return run_track(traj, estimator_factory(traj), policy)

    if async_mode:
        return _run_benchmark_async(scenarios, run_one)
    return [run_one(name) for name in scenarios]


async def _run_benchmark_async(scenarios: Sequence[str], run_one: Callable[[str], TrackReport]) -> List[TrackReport]:
    return list(await asyncio.gather(*(asyncio.to_thread(run_one, name) for name in scenarios)))
