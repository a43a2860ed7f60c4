"""
Synthetic RGB-D frame pairs: a small z-buffer rasterizer, background and
occluder compositing with mask bookkeeping, the Kinect depth noise model,
photometric augmentation, and dataset persistence.

Every sample draws from its own generator seeded by ``(master_seed, index)``
so output does not depend on worker count or iteration order.
"""

import asyncio
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, AsyncIterator, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
from scipy.ndimage import map_coordinates

from posetrack.geom import (
    EulerXYZ,
    Pose,
    TriMesh,
    ellipsoid,
    euler_from_rot,
    golden_spiral,
    inertia_tensor,
    look_at_rotation,
    random_rotation,
    rot_from_euler,
)
from posetrack.losses import PoseDelta9
from posetrack.utils.config import config, config_echo
from posetrack.utils.errors import DatasetError, DimensionMismatch, OutOfFrustum
from posetrack.utils.helper import (
    derive_rng,
    validate_positive_int,
    validate_probability,
    validate_range,
)

logger = logging.getLogger(f"{config.LOGGER_NAME}.synth")

AMBIENT = 0.35
DIFFUSE = 0.65
# direction toward the light, camera frame
LIGHT_DIR = np.array([-0.3, -0.5, -1.0]) / np.linalg.norm([-0.3, -0.5, -1.0])
DEFAULT_ALBEDO = (0.80, 0.55, 0.30)
OCCLUDER_ALBEDO = (0.85, 0.65, 0.55)
FULL_COVER_MARGIN_MM = 10


@dataclass(frozen=True)
class Camera:
    fx: float = 210.0
    fy: float = 210.0
    cx: float = 75.0
    cy: float = 75.0
    near: float = 0.1
    far: float = 5.0
    width: int = config.FRAME_WIDTH
    height: int = config.FRAME_HEIGHT

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("Focal lengths must be positive.")
        if not 0.0 < self.near < self.far:
            raise ValueError("Clipping planes must satisfy 0 < near < far.")
        validate_positive_int(self.width, "width")
        validate_positive_int(self.height, "height")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "near": self.near, "far": self.far, "width": self.width, "height": self.height,
        }  # fmt: skip


@dataclass(frozen=True)
class RgbdFrame:
    """
    One RGB-D frame. ``rgb`` is ``(h, w, 3)`` uint8, ``depth`` ``(h, w)``
    uint16 millimeters with 0 marking invalid pixels, masks are ``(h, w)`` bool.
    """

    rgb: np.ndarray
    depth: np.ndarray
    fg_mask: np.ndarray
    unoccl_mask: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "rgb", np.asarray(self.rgb, dtype=np.uint8))
        object.__setattr__(self, "depth", np.asarray(self.depth, dtype=np.uint16))
        object.__setattr__(self, "fg_mask", np.asarray(self.fg_mask, dtype=bool))
        object.__setattr__(self, "unoccl_mask", np.asarray(self.unoccl_mask, dtype=bool))
        shape = self.depth.shape
        if self.rgb.shape != shape + (3,) or self.fg_mask.shape != shape or self.unoccl_mask.shape != shape:
            raise DimensionMismatch("RGB, depth and masks must share the frame size.")
        if np.any(self.unoccl_mask & ~self.fg_mask):
            raise ValueError("The unoccluded mask must lie inside the foreground mask.")

    @property
    def height(self) -> int:
        return int(self.depth.shape[0])

    @property
    def width(self) -> int:
        return int(self.depth.shape[1])

    def replace(self, **changes: Any) -> "RgbdFrame":
        values = {
            "rgb": self.rgb, "depth": self.depth,
            "fg_mask": self.fg_mask, "unoccl_mask": self.unoccl_mask,
        }  # fmt: skip
        values.update(changes)
        return RgbdFrame(**values)

    @classmethod
    def empty(cls, height: int, width: int) -> "RgbdFrame":
        mask = np.zeros((height, width), dtype=bool)
        return cls(np.zeros((height, width, 3), np.uint8), np.zeros((height, width), np.uint16), mask, mask)


@dataclass(frozen=True)
class NoiseParams:
    """
    Kinect v1 style noise. Axial sigma in meters:
    ``axial_a0 + axial_a1 * (z - axial_a2)^2 + axial_theta / sqrt(z) * t^2 / (pi/2 - t)^2``.
    Lateral sigma in pixels: ``b0 + b1 * t / (pi/2 - t)``, where ``t`` is the
    absolute object angle about the camera y axis. Defaults are configuration.
    """

    axial_a0: float = 0.0012
    axial_a1: float = 0.0019
    axial_a2: float = 0.4
    axial_theta: float = 0.0001
    lateral_x0: float = 0.8
    lateral_x1: float = 0.035
    lateral_y0: float = 0.8
    lateral_y1: float = 0.035

    def __post_init__(self) -> None:
        for name in ("axial_a0", "axial_a1", "axial_theta", "lateral_x0", "lateral_x1", "lateral_y0", "lateral_y1"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0.")

    @classmethod
    def zero(cls) -> "NoiseParams":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def sigma_axial(self, z: np.ndarray, theta: float) -> np.ndarray:
        t = min(abs(theta), 1.4)
        z = np.asarray(z, dtype=float)
        angular = self.axial_theta / np.sqrt(np.maximum(z, 1e-6)) * t * t / (math.pi / 2.0 - t) ** 2
        return self.axial_a0 + self.axial_a1 * (z - self.axial_a2) ** 2 + angular

    def sigma_lateral(self, theta: float) -> Tuple[float, float]:
        t = min(abs(theta), 1.4)
        ratio = t / (math.pi / 2.0 - t)
        return self.lateral_x0 + self.lateral_x1 * ratio, self.lateral_y0 + self.lateral_y1 * ratio


@dataclass(frozen=True)
class AugmentConfig:
    p_occluder: float = 0.60
    p_full_occlusion: float = 0.15
    p_contrast: float = 0.5
    alpha_range: Tuple[float, float] = (0.0, 3.0)
    beta_range: Tuple[float, float] = (-50.0, 50.0)
    p_gamma: float = 0.5
    gamma_range: Tuple[float, float] = (0.0, 2.0)
    rgb_noise_sigma: float = 2.0 / 255.0
    hsv_noise_sigma: Tuple[float, float, float] = (0.02, 0.05, 0.05)
    blur_kernel: int = 3
    depth_downsample_factor: int = 2
    p_modality_dropout: float = 0.1

    def __post_init__(self) -> None:
        for name in ("p_occluder", "p_full_occlusion", "p_contrast", "p_gamma", "p_modality_dropout"):
            validate_probability(getattr(self, name), name)
        for name in ("alpha_range", "beta_range", "gamma_range"):
            validate_range(getattr(self, name), name)
        validate_positive_int(self.blur_kernel, "blur_kernel")
        validate_positive_int(self.depth_downsample_factor, "depth_downsample_factor")
        if self.rgb_noise_sigma < 0.0 or min(self.hsv_noise_sigma) < 0.0:
            raise ValueError("Noise sigmas must be >= 0.")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        """Configuration under which augmentation changes nothing."""
        return cls(
            p_occluder=0.0, p_full_occlusion=0.0, p_contrast=0.0, p_gamma=0.0,
            rgb_noise_sigma=0.0, hsv_noise_sigma=(0.0, 0.0, 0.0), blur_kernel=1,
            depth_downsample_factor=1, p_modality_dropout=0.0,
        )  # fmt: skip


@dataclass(frozen=True)
class DeltaRanges:
    """Half-widths of the uniform relative-pose sampler."""

    trans_m: float = config.MAX_DELTA_TRANS
    rot_deg: float = 10.0

    def __post_init__(self) -> None:
        if self.trans_m < 0.0 or self.rot_deg < 0.0:
            raise ValueError("Delta ranges must be >= 0.")


@dataclass(frozen=True)
class DatasetConfig:
    n_viewpoints: int = 64
    distance_m: float = 0.8
    max_delta: float = config.MAX_DELTA_TRANS
    deltas: DeltaRanges = field(default_factory=DeltaRanges)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    noise: NoiseParams = field(default_factory=NoiseParams)

    def __post_init__(self) -> None:
        validate_positive_int(self.n_viewpoints, "n_viewpoints")
        if self.distance_m <= 0.0 or self.max_delta <= 0.0:
            raise ValueError("distance_m and max_delta must be positive.")


class OcclusionBranch(str, Enum):
    NONE = "none"
    PARTIAL = "partial"
    FULL = "full"


@dataclass(frozen=True)
class Sample:
    index: int
    observed: RgbdFrame
    predicted: RgbdFrame
    gt_delta: PoseDelta9
    pose_prev: Pose
    pose_cur: Pose
    branch: OcclusionBranch = OcclusionBranch.NONE


# -- rendering ----------------------------------------------------------------


def _face_colors(albedo, n_faces: int) -> np.ndarray:
    colors = np.asarray(DEFAULT_ALBEDO if albedo is None else albedo, dtype=float)
    if colors.ndim == 1:
        colors = np.broadcast_to(colors, (n_faces, 3))
    if colors.shape != (n_faces, 3):
        raise DimensionMismatch(f"Albedo needs one RGB triple per face, got {colors.shape}.")
    return colors


def render(mesh: TriMesh, pose: Pose, cam: Camera, albedo=None) -> RgbdFrame:
    """
    Rasterize a mesh with perspective projection, a z-buffer and flat
    Lambert shading.

    :param mesh: Object model.
    :param pose: Object-to-camera transform.
    :param cam: Pinhole camera.
    :param albedo: One RGB triple in [0, 1], or one per face.

    :return: RgbdFrame with both masks set to the rendered silhouette.

    :raises OutOfFrustum: If no pixel is covered.
    """
    colors = _face_colors(albedo, mesh.faces.shape[0])
    verts = mesh.vertices @ pose.rot.T + pose.trans
    tri = verts[mesh.faces]
    z = tri[:, :, 2]
    keep = np.all(z > cam.near, axis=1) & np.all(z < cam.far, axis=1)
    safe_z = np.where(keep[:, None], z, 1.0)
    u = cam.fx * tri[:, :, 0] / safe_z + cam.cx
    v = cam.fy * tri[:, :, 1] / safe_z + cam.cy

    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    centroids = tri.mean(axis=1)
    facing_away = np.einsum("ij,ij->i", normals, centroids) > 0.0
    normals[facing_away] *= -1.0
    shade = AMBIENT + DIFFUSE * np.clip(normals @ LIGHT_DIR, 0.0, None)

    h, w = cam.height, cam.width
    zbuf = np.full((h, w), np.inf)
    color = np.zeros((h, w, 3))
    for f in np.flatnonzero(keep):
        us, vs, zs = u[f], v[f], z[f]
        x0, x1 = max(math.ceil(us.min()), 0), min(math.floor(us.max()), w - 1)
        y0, y1 = max(math.ceil(vs.min()), 0), min(math.floor(vs.max()), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        area = (us[1] - us[0]) * (vs[2] - vs[0]) - (us[2] - us[0]) * (vs[1] - vs[0])
        if abs(area) < 1e-12:
            continue
        xs, ys = np.meshgrid(np.arange(x0, x1 + 1, dtype=float), np.arange(y0, y1 + 1, dtype=float))
        w0 = ((us[1] - xs) * (vs[2] - ys) - (us[2] - xs) * (vs[1] - ys)) / area
        w1 = ((us[2] - xs) * (vs[0] - ys) - (us[0] - xs) * (vs[2] - ys)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue
        # perspective-correct: 1/z is affine in screen space
        depth = 1.0 / (w0 / zs[0] + w1 / zs[1] + w2 / zs[2])
        zsub = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        closer = inside & (depth < zsub)
        zsub[closer] = depth[closer]
        color[y0 : y1 + 1, x0 : x1 + 1][closer] = colors[f] * shade[f]

    fg = np.isfinite(zbuf)
    if not fg.any():
        raise OutOfFrustum("The mesh covers no pixel of the frame.")
    depth_mm = np.zeros((h, w), dtype=np.uint16)
    depth_mm[fg] = np.clip(np.rint(zbuf[fg] * 1000.0), 1, 65535).astype(np.uint16)
    rgb = np.clip(np.rint(color * 255.0), 0, 255).astype(np.uint8)
    return RgbdFrame(rgb, depth_mm, fg, fg.copy())


# -- sampling -----------------------------------------------------------------


def sample_pose_pair(
    rng: np.random.Generator,
    viewpoint_index: int,
    n_viewpoints: int,
    delta_ranges: DeltaRanges,
    distance_m: float = 0.8,
) -> Tuple[Pose, Pose]:
    """
    A camera-facing pose on a golden-spiral viewpoint and the pose reached
    by a uniformly drawn relative motion.

    :param rng: Random generator.
    :param viewpoint_index: Which spiral direction to look from.
    :param n_viewpoints: Number of spiral directions.
    :param delta_ranges: Half-widths for the relative translation (m) and rotation (deg).
    :param distance_m: Object distance from the camera.

    :return: (pose_prev, pose_cur) with ``pose_cur = pose_prev ∘ delta``.
    """
    if not 0 <= viewpoint_index < n_viewpoints:
        raise ValueError(f"viewpoint_index {viewpoint_index} outside [0, {n_viewpoints}).")
    direction = golden_spiral(n_viewpoints)[viewpoint_index]
    roll = rng.uniform(-math.pi, math.pi)
    pose_prev = Pose(look_at_rotation(direction, roll), np.array([0.0, 0.0, distance_m]))

    d_trans = rng.uniform(-delta_ranges.trans_m, delta_ranges.trans_m, 3)
    d_rot = rng.uniform(-delta_ranges.rot_deg, delta_ranges.rot_deg, 3)
    delta = Pose(rot_from_euler(EulerXYZ(*d_rot)), d_trans)
    return pose_prev, pose_prev.compose(delta)


def draw_occlusion(cfg: AugmentConfig, rng: np.random.Generator) -> OcclusionBranch:
    """
    Draw the occlusion branch of one sample. Both uniforms are always
    consumed so later draws do not depend on the branch.
    """
    occluded, full = rng.random(), rng.random()
    if occluded >= cfg.p_occluder:
        return OcclusionBranch.NONE
    return OcclusionBranch.FULL if full < cfg.p_full_occlusion else OcclusionBranch.PARTIAL


def occluder_pose(object_pose: Pose, rng: np.random.Generator) -> Pose:
    """Random pose of the hand-proxy occluder between the camera and the object."""
    scale = rng.uniform(0.55, 0.85)
    trans = object_pose.trans * scale
    trans[:2] += rng.uniform(-0.04, 0.04, 2) * scale
    return Pose(random_rotation(rng), trans)


def procedural_background(cam: Camera, rng: np.random.Generator) -> RgbdFrame:
    """
    Smooth value-noise colors over a slanted plane 1.5 to 3 m away.

    :return: RgbdFrame with empty masks.
    """
    coarse = rng.integers(0, 256, size=(6, 6, 3)).astype(np.float32)
    rgb = cv2.resize(coarse, (cam.width, cam.height), interpolation=cv2.INTER_CUBIC)
    rgb += rng.normal(0.0, 6.0, size=rgb.shape).astype(np.float32)

    d0 = rng.uniform(1.5, 3.0)
    gx, gy = rng.uniform(-0.004, 0.004, 2)
    xs, ys = np.meshgrid(np.arange(cam.width) - cam.cx, np.arange(cam.height) - cam.cy)
    plane = np.clip(d0 + gx * xs + gy * ys, cam.near, cam.far)
    depth = np.rint(plane * 1000.0).astype(np.uint16)

    mask = np.zeros((cam.height, cam.width), dtype=bool)
    return RgbdFrame(np.clip(np.rint(rgb), 0, 255).astype(np.uint8), depth, mask, mask)


# -- compositing ---------------------------------------------------------------


def _check_same_size(*frames: RgbdFrame) -> None:
    shapes = {f.depth.shape for f in frames}
    if len(shapes) > 1:
        raise DimensionMismatch(f"Frames differ in size: {sorted(shapes)}.")


def _bbox(mask: np.ndarray) -> Tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return int(ys.min()), int(ys.max()), int(xs.min()), int(xs.max())


def _cover_fully(object_frame: RgbdFrame, occluder: RgbdFrame) -> RgbdFrame:
    """Move and scale the occluder in front of the whole object silhouette."""
    h, w = object_frame.height, object_frame.width
    front_mm = int(object_frame.depth[object_frame.fg_mask].min()) - FULL_COVER_MARGIN_MM
    front_mm = max(front_mm, 1)

    rgb = np.zeros((h, w, 3), np.uint8)
    depth = np.zeros((h, w), np.uint16)
    cover = np.zeros((h, w), bool)

    y0, y1, x0, x1 = _bbox(object_frame.fg_mask)
    cy, cx = (y0 + y1) / 2.0, (x0 + x1) / 2.0
    half_h, half_w = 0.75 * (y1 - y0 + 1), 0.75 * (x1 - x0 + 1)
    ty0, ty1 = max(int(cy - half_h), 0), min(int(math.ceil(cy + half_h)), h - 1)
    tx0, tx1 = max(int(cx - half_w), 0), min(int(math.ceil(cx + half_w)), w - 1)
    size = (tx1 - tx0 + 1, ty1 - ty0 + 1)

    fill_color = np.array(OCCLUDER_ALBEDO) * 255.0
    if occluder.fg_mask.any():
        oy0, oy1, ox0, ox1 = _bbox(occluder.fg_mask)
        crop = (slice(oy0, oy1 + 1), slice(ox0, ox1 + 1))
        r_mask = cv2.resize(occluder.fg_mask[crop].astype(np.uint8), size, interpolation=cv2.INTER_NEAREST) > 0
        r_rgb = cv2.resize(occluder.rgb[crop], size, interpolation=cv2.INTER_NEAREST)
        r_depth = cv2.resize(occluder.depth[crop], size, interpolation=cv2.INTER_NEAREST).astype(np.int64)
        if r_mask.any():
            r_depth = r_depth - int(r_depth[r_mask].max()) + front_mm
            region = (slice(ty0, ty1 + 1), slice(tx0, tx1 + 1))
            cover[region] = r_mask
            rgb[region][r_mask] = r_rgb[r_mask]
            depth[region][r_mask] = np.clip(r_depth[r_mask], 1, 65535).astype(np.uint16)
        fill_color = occluder.rgb[occluder.fg_mask].mean(axis=0)

    leftover = object_frame.fg_mask & ~cover
    cover |= leftover
    rgb[leftover] = np.rint(fill_color).astype(np.uint8)
    depth[leftover] = front_mm
    return RgbdFrame(rgb, depth, cover, cover)


def composite(
    object_frame: RgbdFrame,
    background: RgbdFrame,
    occluder_frame: Optional[RgbdFrame],
    cfg: AugmentConfig,
    rng: np.random.Generator,
    branch: Optional[OcclusionBranch] = None,
) -> RgbdFrame:
    """
    Blend the object over a background and optionally an occluder.

    The occluder is composited by depth test. In the full branch it is first
    moved in front of and scaled over the whole object. ``fg_mask`` keeps the
    object region; ``unoccl_mask`` drops the pixels the occluder covers.

    :param branch: Occlusion branch; drawn from ``cfg`` when not given.

    :raises DimensionMismatch: If the frames differ in size.
    """
    frames = [object_frame, background] + ([occluder_frame] if occluder_frame is not None else [])
    _check_same_size(*frames)
    if branch is None:
        branch = draw_occlusion(cfg, rng)
    if occluder_frame is None:
        branch = OcclusionBranch.NONE

    fg = object_frame.fg_mask
    rgb = np.where(fg[..., None], object_frame.rgb, background.rgb)
    depth = np.where(fg, object_frame.depth, background.depth)

    unoccl = fg.copy()
    if branch != OcclusionBranch.NONE:
        occluder = _cover_fully(object_frame, occluder_frame) if branch == OcclusionBranch.FULL else occluder_frame
        in_front = occluder.fg_mask & ((depth == 0) | (occluder.depth < depth))
        rgb = np.where(in_front[..., None], occluder.rgb, rgb)
        depth = np.where(in_front, occluder.depth, depth)
        unoccl = fg & ~in_front
        logger.debug("Composited %s occluder covering %d object pixels", branch.value, int((fg & in_front).sum()))
    return RgbdFrame(rgb, depth, fg, unoccl)


# -- noise and augmentation ---------------------------------------------------


def kinect_noise(frame: RgbdFrame, pose: Pose, params: NoiseParams, rng: np.random.Generator) -> RgbdFrame:
    """
    Apply axial and lateral depth noise to the valid pixels of a frame.

    Lateral noise jitters each pixel's sampling location and re-reads the
    depth bilinearly, falling back to the nearest sample next to invalid
    pixels. Invalid pixels stay invalid.

    :param frame: Input frame.
    :param pose: Object pose; its y Euler angle drives the angular terms.
    :param params: Noise model.
    :param rng: Random generator.

    :return: RgbdFrame
    """
    valid = frame.depth > 0
    if not valid.any():
        return frame
    theta = math.radians(euler_from_rot(pose.rot).y)
    depth_m = frame.depth.astype(float) / 1000.0

    sigma_lx, sigma_ly = params.sigma_lateral(theta)
    if sigma_lx > 0.0 or sigma_ly > 0.0:
        h, w = depth_m.shape
        ys, xs = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
        coords = np.stack([ys + rng.normal(0.0, sigma_ly, ys.shape), xs + rng.normal(0.0, sigma_lx, xs.shape)])
        bilinear = map_coordinates(depth_m, coords, order=1, mode="nearest")
        nearest = map_coordinates(depth_m, coords, order=0, mode="nearest")
        support = map_coordinates(valid.astype(float), coords, order=1, mode="nearest")
        depth_m = np.where(support > 1.0 - 1e-9, bilinear, nearest)

    sigma_a = params.sigma_axial(depth_m, theta)
    if np.any(sigma_a > 0.0):
        depth_m = depth_m + rng.normal(0.0, 1.0, depth_m.shape) * sigma_a

    resampled = depth_m > 0.0
    out = np.zeros_like(frame.depth)
    keep = valid & resampled
    out[keep] = np.clip(np.rint(depth_m[keep] * 1000.0), 1, 65535).astype(np.uint16)
    return frame.replace(depth=out)


def adjust_contrast(rgb: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """``clamp(alpha * v + beta)`` on 0..255 values."""
    return np.clip(alpha * np.asarray(rgb, dtype=float) + beta, 0.0, 255.0)


def adjust_gamma(rgb: np.ndarray, gamma: float) -> np.ndarray:
    """``255 * (v / 255) ** gamma`` on 0..255 values."""
    return 255.0 * np.power(np.clip(np.asarray(rgb, dtype=float), 0.0, 255.0) / 255.0, gamma)


def _jitter_hsv(rgb: np.ndarray, sigma: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    hsv = cv2.cvtColor((rgb / 255.0).astype(np.float32), cv2.COLOR_RGB2HSV)
    dh, ds, dv = rng.normal(0.0, 1.0, 3) * np.asarray(sigma)
    hsv[..., 0] = np.mod(hsv[..., 0] + dh * 360.0, 360.0)
    hsv[..., 1] = np.clip(hsv[..., 1] + ds, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] + dv, 0.0, 1.0)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).astype(float) * 255.0


def augment_photometric(frame: RgbdFrame, cfg: AugmentConfig, rng: np.random.Generator) -> RgbdFrame:
    """
    Photometric and depth-resolution augmentation, in order: RGB noise, HSV
    jitter, box blur, contrast, gamma, depth down/up-sampling, modality
    dropout. Masks are untouched and each step is skipped when its settings
    make it the identity.

    :return: RgbdFrame
    """
    rgb = frame.rgb.astype(float)
    depth = frame.depth
    valid = depth > 0

    if cfg.rgb_noise_sigma > 0.0:
        rgb = rgb + rng.normal(0.0, cfg.rgb_noise_sigma * 255.0, rgb.shape)
    if any(s > 0.0 for s in cfg.hsv_noise_sigma):
        rgb = _jitter_hsv(np.clip(rgb, 0.0, 255.0), cfg.hsv_noise_sigma, rng)
    if cfg.blur_kernel > 1:
        rgb = cv2.blur(rgb, (cfg.blur_kernel, cfg.blur_kernel))
    if rng.random() < cfg.p_contrast:
        rgb = adjust_contrast(rgb, rng.uniform(*cfg.alpha_range), rng.uniform(*cfg.beta_range))
    if rng.random() < cfg.p_gamma:
        rgb = adjust_gamma(rgb, rng.uniform(*cfg.gamma_range))

    factor = cfg.depth_downsample_factor
    if factor > 1:
        h, w = depth.shape
        small = cv2.resize(depth, (max(w // factor, 1), max(h // factor, 1)), interpolation=cv2.INTER_NEAREST)
        depth = cv2.resize(small, (w, h), interpolation=cv2.INTER_NEAREST)
        depth = np.where(valid, depth, 0).astype(np.uint16)

    if rng.random() < cfg.p_modality_dropout:
        if rng.random() < 0.5:
            rgb = np.zeros_like(rgb)
        else:
            depth = np.zeros_like(depth)

    out_rgb = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    return frame.replace(rgb=out_rgb, depth=depth)


# -- dataset generation ---------------------------------------------------------


def make_sample(
    index: int,
    mesh: TriMesh,
    cam: Camera,
    cfg: DatasetConfig,
    master_seed: int,
    occluder_mesh: Optional[TriMesh] = None,
) -> Sample:
    """Build sample ``index``; depends only on its arguments."""
    rng = derive_rng(master_seed, index)
    pose_prev, pose_cur = sample_pose_pair(
        rng, index % cfg.n_viewpoints, cfg.n_viewpoints, cfg.deltas, cfg.distance_m
    )
    predicted = render(mesh, pose_prev, cam)
    observed = render(mesh, pose_cur, cam)
    background = procedural_background(cam, rng)

    branch = draw_occlusion(cfg.augment, rng)
    occluder = None
    if branch != OcclusionBranch.NONE:
        occluder_model = occluder_mesh if occluder_mesh is not None else ellipsoid()
        try:
            occluder = render(occluder_model, occluder_pose(pose_cur, rng), cam, OCCLUDER_ALBEDO)
        except OutOfFrustum:
            occluder = RgbdFrame.empty(cam.height, cam.width)
    observed = composite(observed, background, occluder, cfg.augment, rng, branch=branch)
    observed = kinect_noise(observed, pose_cur, cfg.noise, rng)
    observed = augment_photometric(observed, cfg.augment, rng)

    delta = pose_prev.inverse().compose(pose_cur)
    return Sample(
        index=index,
        observed=observed,
        predicted=predicted,
        gt_delta=PoseDelta9.from_pose(delta, cfg.max_delta),
        pose_prev=pose_prev,
        pose_cur=pose_cur,
        branch=branch,
    )


def generate_dataset(
    n: int,
    mesh: TriMesh,
    cam: Camera,
    cfg: DatasetConfig,
    master_seed: int,
    workers: int = 1,
    occluder_mesh: Optional[TriMesh] = None,
) -> List[Sample]:
    """
    Generate ``n`` observed/predicted frame pairs with ground-truth deltas.

    :param n: Number of samples.
    :param mesh: Object model.
    :param cam: Camera.
    :param cfg: Dataset configuration.
    :param master_seed: Run seed.
    :param workers: Thread count; output is identical for any value.
    :param occluder_mesh: Occluder model, an ellipsoid hand proxy by default.

    :return: List[Sample] in index order.
    """
    validate_positive_int(n, "n")
    validate_positive_int(workers, "workers")
    logger.info("Generating %d samples with seed %d on %d worker(s)", n, master_seed, workers)

    def build(i: int) -> Sample:
        return make_sample(i, mesh, cam, cfg, master_seed, occluder_mesh)

    if workers == 1:
        samples = [build(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(build, range(n)))
    logger.info("Generated %d samples", len(samples))
    return samples


# -- persistence ----------------------------------------------------------------

MANIFEST = "manifest.json"
PXM_FLAGS = [cv2.IMWRITE_PXM_BINARY, 1]


def _write_image(path: Path, image: np.ndarray) -> None:
    if not cv2.imwrite(str(path), image, PXM_FLAGS):
        raise DatasetError(f"Could not write '{path}'.")


def _read_image(path: Path) -> np.ndarray:
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise DatasetError(f"Missing or unreadable dataset file '{path}'.")
    return image


def _write_frame(out: Path, prefix: str, index: int, frame: RgbdFrame) -> None:
    _write_image(out / f"{prefix}rgb_{index}.ppm", cv2.cvtColor(frame.rgb, cv2.COLOR_RGB2BGR))
    _write_image(out / f"{prefix}depth_{index}.pgm", frame.depth)
    _write_image(out / f"{prefix}fg_{index}.pgm", frame.fg_mask.astype(np.uint8) * 255)
    _write_image(out / f"{prefix}unoccl_{index}.pgm", frame.unoccl_mask.astype(np.uint8) * 255)


def _read_frame(root: Path, prefix: str, index: int) -> RgbdFrame:
    rgb = cv2.cvtColor(_read_image(root / f"{prefix}rgb_{index}.ppm"), cv2.COLOR_BGR2RGB)
    depth = _read_image(root / f"{prefix}depth_{index}.pgm")
    fg = _read_image(root / f"{prefix}fg_{index}.pgm") > 0
    unoccl = _read_image(root / f"{prefix}unoccl_{index}.pgm") > 0
    try:
        return RgbdFrame(rgb, depth, fg, unoccl)
    except (DimensionMismatch, ValueError) as e:
        raise DatasetError(f"Sample {index} in '{root}' is inconsistent: {e}")


def write_dataset(
    samples: Sequence[Sample],
    out_dir: Union[str, Path],
    mesh: TriMesh,
    cam: Camera,
    cfg: DatasetConfig,
    master_seed: int,
) -> Path:
    """
    Persist samples as PPM/PGM images plus per-sample JSON metadata and a
    manifest. Observed frames use the plain file names, predicted frames the
    ``pred_`` prefix.

    :return: Path of the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        _write_frame(out, "", s.index, s.observed)
        _write_frame(out, "pred_", s.index, s.predicted)
        meta = {
            "index": s.index,
            "seed": [master_seed, s.index],
            "pose_prev": s.pose_prev.to_dict(),
            "pose_cur": s.pose_cur.to_dict(),
            "gt_delta": s.gt_delta.as_vector().tolist(),
            "occlusion": s.branch.value,
        }
        (out / f"meta_{s.index}.json").write_text(json.dumps(meta, sort_keys=True, indent=2), encoding="utf-8")

    manifest = {
        "samples": len(samples),
        "master_seed": master_seed,
        "camera": cam.to_dict(),
        "config": config_echo(cfg),
        "lambda_gs": inertia_tensor(mesh).lambda_gs.tolist(),
    }
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")
    return path


def read_manifest(root: Union[str, Path]) -> Dict[str, Any]:
    path = Path(root) / MANIFEST
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"No dataset manifest at '{path}'.")
    except json.JSONDecodeError as e:
        raise DatasetError(f"Dataset manifest '{path}' is not valid JSON: {e}")
    if not isinstance(manifest, dict) or "samples" not in manifest:
        raise DatasetError(f"Dataset manifest '{path}' lacks a sample count.")
    return manifest


def read_sample(root: Union[str, Path], index: int) -> Sample:
    root = Path(root)
    try:
        meta = json.loads((root / f"meta_{index}.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"Missing metadata for sample {index} in '{root}'.")
    return Sample(
        index=index,
        observed=_read_frame(root, "", index),
        predicted=_read_frame(root, "pred_", index),
        gt_delta=PoseDelta9.from_vector(meta["gt_delta"]),
        pose_prev=Pose.from_dict(meta["pose_prev"]),
        pose_cur=Pose.from_dict(meta["pose_cur"]),
        branch=OcclusionBranch(meta.get("occlusion", "none")),
    )


def load_dataset(root: Union[str, Path]) -> Tuple[Dict[str, Any], List[Sample]]:
    """
    Read a dataset written by :func:`write_dataset`.

    :return: (manifest, samples)

    :raises DatasetError: If the manifest or any sample file is missing.
    """
    manifest = read_manifest(root)
    return manifest, [read_sample(root, i) for i in range(int(manifest["samples"]))]


def stream_dataset(
    root: Union[str, Path], async_mode: bool = False
) -> Union[Iterator[Sample], AsyncIterator[Sample]]:
    """
    If async_mode=False, returns a synchronous iterator over the samples.
    If async_mode=True, returns an asynchronous iterator that reads each
    sample in a worker thread.
    """
    manifest = read_manifest(root)
    count = int(manifest["samples"])
    if async_mode:
        return _stream_async(Path(root), count)
    return _stream_sync(Path(root), count)


def _stream_sync(root: Path, count: int) -> Iterator[Sample]:
    for i in range(count):
        yield read_sample(root, i)


async def _stream_async(root: Path, count: int) -> AsyncIterator[Sample]:
    for i in range(count):
        yield await asyncio.to_thread(read_sample, root, i)
