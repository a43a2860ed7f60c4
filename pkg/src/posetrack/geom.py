"""
Rotation and pose types, the 6D rotation representation, the SO(3) geodesic
metric, surface inertia tensors, Gram-Schmidt orthonormalization, Euler
conversions and viewpoint sampling.

Rotation matrices are plain ``(3, 3)`` float arrays. Every function here is
pure.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from posetrack.utils.common_types import FloatArray, Matrix3, RotationMatrix, Vector3
from posetrack.utils.errors import DegenerateInput, DegenerateMesh, ObjParseError

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
ARCCOS_EPS = 1e-12
ROT6D_MIN_NORM = 1e-12
ROT6D_PARALLEL_TOL = 1e-10
GIMBAL_TOL = 1e-9


def _as_vec3(values: Sequence[float]) -> Vector3:
    arr = np.asarray(values, dtype=float).reshape(3)
    return arr


@dataclass(frozen=True)
class Rot6D:
    """
    Continuous 6D rotation parameters: two unconstrained 3-vectors whose
    Gram-Schmidt completion gives the rows of a rotation matrix.
    """

    rx: Vector3
    ry: Vector3

    def __post_init__(self) -> None:
        object.__setattr__(self, "rx", _as_vec3(self.rx))
        object.__setattr__(self, "ry", _as_vec3(self.ry))

    def as_vector(self) -> FloatArray:
        return np.concatenate([self.rx, self.ry])

    @classmethod
    def from_vector(cls, values: Sequence[float]) -> "Rot6D":
        arr = np.asarray(values, dtype=float).reshape(6)
        return cls(arr[:3], arr[3:])

    @classmethod
    def identity(cls) -> "Rot6D":
        return cls(np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))


@dataclass(frozen=True)
class EulerXYZ:
    """Intrinsic X-then-Y-then-Z Euler angles in degrees, each in (-180, 180]."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def as_array(self) -> FloatArray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "EulerXYZ":
        x, y, z = (float(wrap_degrees(v)) for v in values)
        return cls(x, y, z)


@dataclass(frozen=True)
class Pose:
    """
    Rigid transform taking object coordinates to camera coordinates,
    ``p_cam = rot @ p_obj + trans``. Translation is in meters.
    """

    rot: RotationMatrix = field(default_factory=lambda: np.eye(3))
    trans: Vector3 = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        rot = np.asarray(self.rot, dtype=float).reshape(3, 3)
        trans = _as_vec3(self.trans)
        if not np.all(np.isfinite(trans)):
            raise ValueError("Pose translation must be finite.")
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "trans", trans)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> FloatArray:
        out = np.eye(4)
        out[:3, :3] = self.rot
        out[:3, 3] = self.trans
        return out

    def compose(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def inverse(self) -> "Pose":
        return invert(self)

    def to_dict(self) -> dict:
        return {"rot": self.rot.tolist(), "trans": self.trans.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Pose":
        return cls(np.array(data["rot"], dtype=float), np.array(data["trans"], dtype=float))


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh in the object frame, vertices in meters."""

    vertices: FloatArray
    faces: np.ndarray

    def __post_init__(self) -> None:
        vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if faces.shape[0] < 1:
            raise DegenerateMesh("A mesh needs at least one face.")
        if faces.min() < 0 or faces.max() >= vertices.shape[0]:
            raise DegenerateMesh("Face indices must reference existing vertices.")
        if np.any(face_areas(vertices, faces) <= 1e-12):
            raise DegenerateMesh("Mesh contains a face with zero area.")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    def translated(self, offset: Sequence[float]) -> "TriMesh":
        return TriMesh(self.vertices + _as_vec3(offset), self.faces)

    def scaled(self, factors: Union[float, Sequence[float]]) -> "TriMesh":
        return TriMesh(self.vertices * np.asarray(factors, dtype=float), self.faces)


@dataclass(frozen=True)
class InertiaTensor:
    """Surface inertia tensor and its orthonormalized rotation form."""

    lam: Matrix3
    lambda_gs: RotationMatrix


def face_areas(vertices: FloatArray, faces: np.ndarray) -> FloatArray:
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def matrix_from_rot6d(r: Rot6D) -> RotationMatrix:
    """
    Decode 6D parameters into a rotation matrix whose rows are
    ``normalize(rx)``, the normalized part of ``ry`` orthogonal to it, and
    their cross product.

    :param r: The 6D parameters.

    :return: RotationMatrix

    :raises DegenerateInput: If rx is near zero or ry is near parallel to rx.
    """
    rx_norm = np.linalg.norm(r.rx)
    if not rx_norm > ROT6D_MIN_NORM:
        raise DegenerateInput("Rot6D rx is too close to zero.")
    row_x = r.rx / rx_norm

    ortho = r.ry - np.dot(row_x, r.ry) * row_x
    ortho_norm = np.linalg.norm(ortho)
    ry_norm = np.linalg.norm(r.ry)
    if not ry_norm > ROT6D_MIN_NORM or not ortho_norm > ROT6D_PARALLEL_TOL * ry_norm:
        raise DegenerateInput("Rot6D ry is parallel to rx.")
    row_y = ortho / ortho_norm
    row_z = np.cross(row_x, row_y)
    return np.stack([row_x, row_y, row_z])


def rot6d_from_matrix(rot: RotationMatrix) -> Rot6D:
    """
    Encode a rotation matrix as its first two rows.

    :param rot: A valid rotation matrix.

    :return: Rot6D
    """
    rot = np.asarray(rot, dtype=float)
    return Rot6D(rot[0].copy(), rot[1].copy())


def rot6d_sine(r: Rot6D) -> float:
    """Sine of the angle between rx and ry; small values mean near-degenerate."""
    nx, ny = np.linalg.norm(r.rx), np.linalg.norm(r.ry)
    if nx <= ROT6D_MIN_NORM or ny <= ROT6D_MIN_NORM:
        return 0.0
    return float(np.linalg.norm(np.cross(r.rx, r.ry)) / (nx * ny))


def geodesic_cosine(r1: RotationMatrix, r2: RotationMatrix) -> float:
    """Unclamped cosine of the relative rotation angle, (Tr(R1^T R2) - 1) / 2."""
    return float((np.sum(np.asarray(r1) * np.asarray(r2)) - 1.0) / 2.0)


def geodesic_distance(r1: RotationMatrix, r2: RotationMatrix) -> float:
    """
    Length in radians of the shortest path on SO(3) between two rotations.

    :param r1: First rotation.
    :param r2: Second rotation.

    :return: float in [0, pi]
    """
    c = np.clip(geodesic_cosine(r1, r2), -1.0 + ARCCOS_EPS, 1.0 - ARCCOS_EPS)
    return float(np.arccos(c))


def gram_schmidt(m: Matrix3) -> RotationMatrix:
    """
    Column-wise Gram-Schmidt orthonormalization with a sign fix so the
    result is a proper rotation.

    :param m: A full-rank 3x3 matrix.

    :return: RotationMatrix

    :raises DegenerateInput: If the columns are linearly dependent.
    """
    m = np.asarray(m, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(m)):
        raise DegenerateInput("Matrix has non-finite entries.")
    smallest = np.linalg.svd(m, compute_uv=False)[-1]
    if not smallest > 1e-10:
        raise DegenerateInput(f"Matrix is rank deficient (smallest singular value {smallest:.3e}).")

    cols: List[Vector3] = []
    for k in range(3):
        vec = m[:, k].copy()
        for prev in cols:
            vec = vec - np.dot(prev, vec) * prev
        norm = np.linalg.norm(vec)
        if not norm > 1e-12:
            raise DegenerateInput("Matrix columns are linearly dependent.")
        cols.append(vec / norm)

    q = np.stack(cols, axis=1)
    if np.linalg.det(q) < 0.0:
        q[:, 2] = -q[:, 2]
    return q


def inertia_tensor(mesh: TriMesh) -> InertiaTensor:
    """
    Area-weighted surface inertia tensor about the surface center of mass,
    lumping each face at its centroid.

    :param mesh: Object model.

    :return: InertiaTensor

    :raises DegenerateMesh: If the total surface area vanishes.
    """
    areas = face_areas(mesh.vertices, mesh.faces)
    total = float(areas.sum())
    if total < 1e-12:
        raise DegenerateMesh("Mesh surface area is too small.")

    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    center = (areas[:, None] * centroids).sum(axis=0) / total
    rel = centroids - center

    sq = np.einsum("ij,ij->i", rel, rel)
    lam = np.eye(3) * np.sum(areas * sq) - np.einsum("i,ij,ik->jk", areas, rel, rel)
    lam = 0.5 * (lam + lam.T)
    return InertiaTensor(lam=lam, lambda_gs=gram_schmidt(lam))


def golden_spiral(n: int) -> FloatArray:
    """
    Near-uniform deterministic directions on the unit sphere.

    :param n: Number of points.

    :return: ``(n, 3)`` array of unit vectors.
    """
    if n < 1:
        raise ValueError("golden_spiral needs n >= 1.")
    i = np.arange(n, dtype=float)
    z = 1.0 - 2.0 * (i + 0.5) / n
    radius = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    azimuth = 2.0 * np.pi * i * (1.0 - 1.0 / GOLDEN_RATIO)
    points = np.stack([radius * np.cos(azimuth), radius * np.sin(azimuth), z], axis=1)
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def wrap_degrees(angle: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    wrapped = math.fmod(float(angle) + 180.0, 360.0)
    if wrapped < 0.0:
        wrapped += 360.0
    wrapped -= 180.0
    return 180.0 if wrapped == -180.0 else wrapped


def axis_rotation(axis: int, angle_rad: float) -> RotationMatrix:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    if axis == 0:
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == 1:
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _axis_rotation_derivative(axis: int, angle_rad: float) -> Matrix3:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    if axis == 0:
        return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])
    if axis == 1:
        return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def rot_from_euler_rad(angles: Sequence[float]) -> RotationMatrix:
    """Intrinsic X-Y-Z rotation ``Rx @ Ry @ Rz`` from radians."""
    ax, ay, az = (float(a) for a in angles)
    return axis_rotation(0, ax) @ axis_rotation(1, ay) @ axis_rotation(2, az)


def euler_jacobian_rad(angles: Sequence[float]) -> FloatArray:
    """
    Derivatives of ``rot_from_euler_rad`` with respect to each angle.

    :return: ``(3, 3, 3)`` array, entry ``k`` is dR/d(angle k).
    """
    ax, ay, az = (float(a) for a in angles)
    rx, ry, rz = axis_rotation(0, ax), axis_rotation(1, ay), axis_rotation(2, az)
    return np.stack(
        [
            _axis_rotation_derivative(0, ax) @ ry @ rz,
            rx @ _axis_rotation_derivative(1, ay) @ rz,
            rx @ ry @ _axis_rotation_derivative(2, az),
        ]
    )


def rot_from_euler(e: EulerXYZ) -> RotationMatrix:
    """
    Rotation for intrinsic X-Y-Z Euler angles in degrees.

    :param e: Euler angles.

    :return: RotationMatrix
    """
    return rot_from_euler_rad(np.radians(e.as_array()))


def euler_from_rot(rot: RotationMatrix) -> EulerXYZ:
    """
    Intrinsic X-Y-Z Euler angles in degrees. At gimbal lock the x angle is
    set to zero and folded into z.

    :param rot: A valid rotation matrix.

    :return: EulerXYZ
    """
    rot = np.asarray(rot, dtype=float)
    sin_y = float(np.clip(rot[0, 2], -1.0, 1.0))
    y = math.asin(sin_y)
    if abs(sin_y) > 1.0 - GIMBAL_TOL:
        x = 0.0
        z = math.atan2(rot[1, 0], rot[1, 1])
    else:
        x = math.atan2(-rot[1, 2], rot[2, 2])
        z = math.atan2(-rot[0, 1], rot[0, 0])
    return EulerXYZ.from_array(np.degrees([x, y, z]))


def compose(p1: Pose, p2: Pose) -> Pose:
    """Rigid composition: apply ``p2`` first, then ``p1``."""
    return Pose(p1.rot @ p2.rot, p1.rot @ p2.trans + p1.trans)


def invert(p: Pose) -> Pose:
    """Rigid inverse."""
    rot_t = p.rot.T
    return Pose(rot_t, -rot_t @ p.trans)


def random_rotation(rng: np.random.Generator, max_angle: float = math.pi) -> RotationMatrix:
    """
    Rotation about a uniformly random axis by an angle uniform in
    ``[0, max_angle)``.

    :param rng: Random generator.
    :param max_angle: Upper bound of the rotation angle in radians.

    :return: RotationMatrix
    """
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def look_at_rotation(direction: Sequence[float], roll_rad: float = 0.0) -> RotationMatrix:
    """
    Object rotation that turns the object-frame ``direction`` toward a camera
    looking down +z, followed by a roll about the optical axis.

    :param direction: Unit viewing direction in the object frame.
    :param roll_rad: Roll about the camera z axis.

    :return: RotationMatrix
    """
    d = _as_vec3(direction)
    d = d / np.linalg.norm(d)
    target = np.array([0.0, 0.0, -1.0])
    axis = np.cross(d, target)
    sin_a, cos_a = np.linalg.norm(axis), float(np.dot(d, target))
    if sin_a < 1e-12:
        align = np.eye(3) if cos_a > 0.0 else axis_rotation(0, math.pi)
    else:
        align = Rotation.from_rotvec(axis / sin_a * math.atan2(sin_a, cos_a)).as_matrix()
    return axis_rotation(2, roll_rad) @ align


def box_mesh(size: Union[float, Sequence[float]] = 1.0) -> TriMesh:
    """
    Axis-aligned box centered at the origin, each face split into four
    triangles around its center.

    :param size: Edge length, or three edge lengths.

    :return: TriMesh
    """
    half = np.broadcast_to(np.asarray(size, dtype=float), (3,)) / 2.0
    corners = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
    )
    vertices = list(corners * half)
    faces = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            on_face = [i for i, c in enumerate(corners) if c[axis] == sign]
            others = [(axis + 1) % 3, (axis + 2) % 3]
            # order the four corners around the face
            ordered = sorted(
                on_face,
                key=lambda i: math.atan2(corners[i][others[1]], corners[i][others[0]]),
            )
            center = np.zeros(3)
            center[axis] = sign * half[axis]
            vertices.append(center)
            c_idx = len(vertices) - 1
            for k in range(4):
                a, b = ordered[k], ordered[(k + 1) % 4]
                faces.append([c_idx, a, b] if sign > 0 else [c_idx, b, a])
    return TriMesh(np.array(vertices), np.array(faces))


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    """
    Sphere built by repeatedly subdividing an icosahedron.

    :param subdivisions: Number of 4-way subdivisions.
    :param radius: Sphere radius in meters.

    :return: TriMesh
    """
    t = GOLDEN_RATIO
    verts = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]  # fmt: skip
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]  # fmt: skip
    points = [np.asarray(v, dtype=float) / np.linalg.norm(v) for v in verts]

    for _ in range(subdivisions):
        midpoints: dict = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                mid = points[a] + points[b]
                points.append(mid / np.linalg.norm(mid))
                midpoints[key] = len(points) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = refined

    return TriMesh(np.array(points) * radius, np.array(faces))


def ellipsoid(semi_axes: Sequence[float] = (0.04, 0.06, 0.02), subdivisions: int = 2) -> TriMesh:
    """Ellipsoid used as a hand-sized occluder proxy."""
    return icosphere(subdivisions).scaled(semi_axes)


def cylinder_mesh(radius: float = 0.05, height: float = 0.12, segments: int = 32) -> TriMesh:
    """
    Closed cylinder around the object z axis, continuously symmetric about z.

    :param radius: Radius in meters.
    :param height: Height in meters.
    :param segments: Number of sides.

    :return: TriMesh
    """
    angles = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    half = height / 2.0
    bottom = np.column_stack([ring, np.full(segments, -half)])
    top = np.column_stack([ring, np.full(segments, half)])
    vertices = np.vstack([bottom, top, [[0.0, 0.0, -half], [0.0, 0.0, half]]])
    cb, ct = 2 * segments, 2 * segments + 1

    faces = []
    for k in range(segments):
        n = (k + 1) % segments
        faces.append([k, n, segments + n])
        faces.append([k, segments + n, segments + k])
        faces.append([cb, n, k])
        faces.append([ct, segments + k, segments + n])
    return TriMesh(vertices, np.array(faces))


def load_obj(path: Union[str, Path]) -> TriMesh:
    """
    Read the ``v x y z`` / ``f i j k`` subset of Wavefront OBJ.

    Blank lines and ``#`` comments are skipped. Face entries may carry
    ``/``-separated texture or normal indices, which are ignored.

    :param path: File to read.

    :return: TriMesh

    :raises FileNotFoundError: If the file does not exist.
    :raises ObjParseError: On any other line kind, polygons or bad indices.
    """
    vertices: List[Tuple[float, float, float]] = []
    faces: List[Tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            kind, values = tokens[0], tokens[1:]
            if kind == "v":
                if len(values) != 3:
                    raise ObjParseError("vertex lines need exactly 3 coordinates", number)
                try:
                    vertices.append(tuple(float(v) for v in values))
                except ValueError:
                    raise ObjParseError("vertex coordinates must be numbers", number)
            elif kind == "f":
                if len(values) != 3:
                    raise ObjParseError(
                        f"only triangles are supported, got {len(values)} vertices", number
                    )
                try:
                    idx = tuple(int(v.split("/")[0]) - 1 for v in values)
                except ValueError:
                    raise ObjParseError("face indices must be integers", number)
                if min(idx) < 0:
                    raise ObjParseError("face indices are 1-based", number)
                faces.append(idx)
            else:
                raise ObjParseError(f"unsupported line kind '{kind}'", number)

    if not faces:
        raise ObjParseError("file has no faces", 0)
    try:
        return TriMesh(np.array(vertices, dtype=float), np.array(faces))
    except DegenerateMesh as e:
        raise ObjParseError(str(e), 0)


def save_obj(mesh: TriMesh, path: Union[str, Path]) -> None:
    """Write a mesh as ``v`` and ``f`` lines."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
