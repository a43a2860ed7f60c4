"""
Continuous rotational-symmetry bank, selection strategies, and the
discrete reflective-symmetry (flip rejection) heuristic.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from posetrack.geom import (
    EulerXYZ,
    euler_from_rot,
    euler_jacobian_rad,
    rot_from_euler_rad,
)
from posetrack.losses import loss_rot
from posetrack.utils.common_types import (
    AxisMask,
    FloatArray,
    Flags3,
    RotationMatrix,
    SelectionStrategy,
)
from posetrack.utils.config import config
from posetrack.utils.errors import IndexOutOfRange

logger = logging.getLogger(f"{config.LOGGER_NAME}.symmetry")

TANH_CLIP = 1.0 - 1e-12
Z_AXIS: AxisMask = (False, False, True)


def _as_mask(mask: Sequence[bool]) -> AxisMask:
    values = tuple(bool(m) for m in mask)
    if len(values) != 3:
        raise ValueError("axis_mask must have exactly 3 entries.")
    return values  # type: ignore[return-value]


@dataclass(frozen=True)
class SymmetryBank:
    """
    ``B2`` unconstrained Euler triplets. Each decodes to angles
    ``tanh(p) * pi`` on the axes enabled in ``axis_mask`` and to exactly zero
    elsewhere.
    """

    params: FloatArray
    axis_mask: AxisMask = Z_AXIS

    def __post_init__(self) -> None:
        params = np.array(self.params, dtype=float).reshape(-1, 3)
        if params.shape[0] < 1:
            raise ValueError("A symmetry bank needs at least one entry.")
        if not np.all(np.isfinite(params)):
            raise ValueError("Symmetry bank parameters must be finite.")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "axis_mask", _as_mask(self.axis_mask))

    @property
    def size(self) -> int:
        return int(self.params.shape[0])

    @property
    def _mask(self) -> FloatArray:
        return np.array(self.axis_mask, dtype=float)

    def decoded_radians(self) -> FloatArray:
        """``(B2, 3)`` decoded Euler angles in radians, strictly inside (-pi, pi)."""
        return np.clip(np.tanh(self.params), -TANH_CLIP, TANH_CLIP) * math.pi * self._mask

    def decoded_degrees(self) -> FloatArray:
        return np.degrees(self.decoded_radians())

    def matrix(self, index: int) -> RotationMatrix:
        if not 0 <= index < self.size:
            raise IndexOutOfRange(f"Bank index {index} outside [0, {self.size}).")
        return rot_from_euler_rad(self.decoded_radians()[index])

    def matrices(self) -> FloatArray:
        """``(B2, 3, 3)`` rotation matrices of every entry."""
        return np.stack([rot_from_euler_rad(angles) for angles in self.decoded_radians()])

    def params_vjp(self, d_mats: FloatArray) -> FloatArray:
        """
        Pull per-entry matrix gradients back to the raw parameters.

        :param d_mats: ``(B2, 3, 3)`` gradient with respect to each entry's matrix.

        :return: ``(B2, 3)`` gradient with respect to ``params``.
        """
        angles = self.decoded_radians()
        t = np.tanh(self.params)
        d_angle_d_param = math.pi * (1.0 - t * t) * self._mask
        d_angle_d_param[np.abs(t) >= TANH_CLIP] = 0.0
        out = np.zeros_like(self.params)
        for k in range(self.size):
            if not np.any(d_mats[k]):
                continue
            jac = euler_jacobian_rad(angles[k])
            out[k] = np.einsum("jab,ab->j", jac, d_mats[k]) * d_angle_d_param[k]
        return out

    def with_params(self, params: FloatArray) -> "SymmetryBank":
        return SymmetryBank(params, self.axis_mask)

    @classmethod
    def zeros(cls, b2: int, axis_mask: Sequence[bool] = Z_AXIS) -> "SymmetryBank":
        return cls(np.zeros((b2, 3)), _as_mask(axis_mask))

    @classmethod
    def from_degrees(cls, angles_deg: Sequence[Sequence[float]], axis_mask: Sequence[bool] = Z_AXIS) -> "SymmetryBank":
        """Bank whose entries decode to the given angles (masked-off axes ignored)."""
        mask = np.array(_as_mask(axis_mask), dtype=float)
        ratio = np.clip(np.asarray(angles_deg, dtype=float).reshape(-1, 3) / 180.0, -TANH_CLIP, TANH_CLIP)
        return cls(np.arctanh(ratio) * mask, _as_mask(axis_mask))

    @classmethod
    def uniform(cls, b2: int, axis_mask: Sequence[bool] = Z_AXIS) -> "SymmetryBank":
        """Evenly spaced angles over (-180, 180) on every enabled axis."""
        angles = -180.0 + (np.arange(b2) + 0.5) * 360.0 / b2
        return cls.from_degrees(np.repeat(angles[:, None], 3, axis=1), axis_mask)

    @classmethod
    def clustered(
        cls,
        b2: int,
        rng: np.random.Generator,
        axis_mask: Sequence[bool] = Z_AXIS,
        spread_deg: float = 2.0,
    ) -> "SymmetryBank":
        """Entries bunched around zero; the starting point for the uniformity penalty."""
        return cls.from_degrees(rng.normal(scale=spread_deg, size=(b2, 3)), axis_mask)

    def to_json(self) -> dict:
        return {"params": self.params.reshape(-1).tolist(), "axis_mask": list(self.axis_mask)}

    @classmethod
    def from_json(cls, data: dict) -> "SymmetryBank":
        return cls(np.asarray(data["params"], dtype=float).reshape(-1, 3), tuple(data["axis_mask"]))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SymmetryBank":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ReflectiveConfig:
    threshold_deg: float = config.REFLECTIVE_THRESHOLD_DEG
    max_repasses: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold_deg <= 180.0:
            raise ValueError("threshold_deg must lie in (0, 180].")
        if self.max_repasses < 0:
            raise ValueError("max_repasses must be >= 0.")


def symmetry_matrix(bank: SymmetryBank, index: int) -> RotationMatrix:
    """
    Rotation of one bank entry.

    :param bank: The symmetry bank.
    :param index: Entry index.

    :return: RotationMatrix

    :raises IndexOutOfRange: If ``index`` is not in the bank.
    """
    return bank.matrix(index)


def select_oracle(
    bank: SymmetryBank,
    dR_hat: RotationMatrix,
    dR_gt: RotationMatrix,
    lambda_gs: RotationMatrix,
) -> int:
    """
    Entry minimizing the rotation loss; ties go to the lowest index.

    :return: int
    """
    losses = [loss_rot(dR_hat, dR_gt, lambda_gs, g) for g in bank.matrices()]
    return int(np.argmin(losses))


def select_mean(bank: SymmetryBank) -> RotationMatrix:
    """Rotation of the per-axis mean of the decoded angles."""
    return rot_from_euler_rad(bank.decoded_radians().mean(axis=0))


def circular_distance_deg(a: float, b: float) -> float:
    diff = abs(float(a) - float(b)) % 360.0
    return min(diff, 360.0 - diff)


def reflective_filter(prev: EulerXYZ, cur: EulerXYZ, cfg: ReflectiveConfig) -> Tuple[EulerXYZ, Flags3]:
    """
    Reject per-axis angular jumps larger than the threshold by keeping the
    previous angle on that axis.

    :param prev: Euler angles of the previous state.
    :param cur: Euler angles of the current estimate.
    :param cfg: Threshold and re-pass settings.

    :return: (filtered angles, per-axis flags)
    """
    prev_a, cur_a = prev.as_array(), cur.as_array()
    out = cur_a.copy()
    flags = []
    for i in range(3):
        jumped = circular_distance_deg(cur_a[i], prev_a[i]) > cfg.threshold_deg
        if jumped:
            out[i] = prev_a[i]
        flags.append(jumped)
    if any(flags):
        logger.debug("Reflective filter replaced axes %s", flags)
    return EulerXYZ.from_array(out), (flags[0], flags[1], flags[2])


def euler_z_err_deg(dR_hat: RotationMatrix, dR_gt: RotationMatrix) -> float:
    """Circular error of the z Euler component, the symmetry-axis error."""
    return circular_distance_deg(euler_from_rot(dR_hat).z, euler_from_rot(dR_gt).z)


def symmetric_rot_loss(
    dR_hat: RotationMatrix,
    dR_gt: RotationMatrix,
    lambda_gs: RotationMatrix,
    bank: Optional[SymmetryBank],
    strategy: SelectionStrategy = "oracle",
    scorer: Optional[Callable[[FloatArray], int]] = None,
    features: Optional[FloatArray] = None,
) -> Tuple[float, Optional[int]]:
    """
    Rotation loss under one of the symmetry handling strategies.

    ``none`` ignores symmetry, ``unique`` uses the first entry only, ``mean``
    the mean of the bank, ``oracle`` the loss-minimizing entry and
    ``trainable`` the entry chosen by ``scorer(features)``.

    :return: (loss, selected index or None)
    """
    if strategy == "none" or bank is None:
        return loss_rot(dR_hat, dR_gt, lambda_gs, np.eye(3)), None
    if strategy == "unique":
        return loss_rot(dR_hat, dR_gt, lambda_gs, bank.matrix(0)), 0
    if strategy == "mean":
        return loss_rot(dR_hat, dR_gt, lambda_gs, select_mean(bank)), None
    if strategy == "oracle":
        index = select_oracle(bank, dR_hat, dR_gt, lambda_gs)
    elif strategy == "trainable":
        if scorer is None or features is None:
            raise ValueError("The trainable strategy needs a scorer and features.")
        index = int(scorer(features))
    else:
        raise ValueError(f"Unknown selection strategy '{strategy}'.")
    return loss_rot(dR_hat, dR_gt, lambda_gs, bank.matrix(index)), index
