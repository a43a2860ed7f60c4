"""
Toy pose regressor standing in for the CNN trunk, hand-crafted frame-pair
features, and the training protocol: LogCosh warm-up, then the
uncertainty-weighted multi-task loss with an optional symmetry bank, all
optimized by Adam with decoupled weight decay and cosine warm restarts.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from posetrack.geom import Rot6D, geodesic_distance, matrix_from_rot6d
from posetrack.losses import (
    BinaryMask,
    PoseDelta9,
    TaskWeights,
    WelfordState,
    bce_from_logits,
    combine_task_losses,
    logcosh,
    logcosh_grad,
    loss_track_terms,
    uniformity_penalty_grad,
    welford_update,
)
from posetrack.symmetry import SymmetryBank, select_oracle
from posetrack.synth import RgbdFrame, Sample
from posetrack.utils.common_types import FloatArray, RotationMatrix, WeightingScheme
from posetrack.utils.config import config
from posetrack.utils.errors import DegenerateInput, DimensionMismatch, NonDifferentiablePoint
from posetrack.utils.helper import validate_positive_int

logger = logging.getLogger(f"{config.LOGGER_NAME}.fit")

FEATURE_COUNT = 11
IDENTITY_ROT6 = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
# pixels of centroid motion that map to one feature unit
PIXEL_SCALE = 5.0
MODEL_ARRAYS = ("weights", "bias", "att_weights", "att_bias")


@dataclass
class ToyRegressor:
    """
    Affine map from an ``F``-dimensional feature vector to a
    :class:`PoseDelta9` plus two ``g x g`` attention logit grids.
    """

    weights: FloatArray
    bias: FloatArray
    att_weights: FloatArray
    att_bias: FloatArray
    grid: int = config.ATTENTION_GRID

    @classmethod
    def create(
        cls,
        n_features: int = FEATURE_COUNT,
        grid: int = config.ATTENTION_GRID,
        init: str = "xavier",
        rng: Optional[np.random.Generator] = None,
    ) -> "ToyRegressor":
        """
        New model whose rotation head starts at the identity.

        :param init: ``"xavier"`` for uniform Glorot initialization or ``"zeros"``.
        """
        validate_positive_int(n_features, "n_features")
        validate_positive_int(grid, "grid")
        cells = 2 * grid * grid
        if init == "zeros":
            weights, att_weights = np.zeros((n_features, 9)), np.zeros((n_features, cells))
        elif init == "xavier":
            rng = rng if rng is not None else np.random.default_rng(0)
            weights = rng.uniform(-1.0, 1.0, (n_features, 9)) * math.sqrt(6.0 / (n_features + 9))
            att_weights = rng.uniform(-1.0, 1.0, (n_features, cells)) * math.sqrt(6.0 / (n_features + cells))
        else:
            raise ValueError(f"Unknown initialization '{init}'.")
        bias = np.concatenate([np.zeros(3), IDENTITY_ROT6])
        return cls(weights, bias, att_weights, np.zeros(cells), grid)

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[0])

    def arrays(self) -> Dict[str, FloatArray]:
        return {name: getattr(self, name) for name in MODEL_ARRAYS}

    def raw(self, features: FloatArray) -> FloatArray:
        f = np.asarray(features, dtype=float)
        if f.shape != (self.n_features,):
            raise DimensionMismatch(f"Expected {self.n_features} features, got {f.shape}.")
        return f @ self.weights + self.bias

    def attention_logits(self, features: FloatArray) -> Tuple[FloatArray, FloatArray]:
        logits = np.asarray(features, dtype=float) @ self.att_weights + self.att_bias
        n = self.grid * self.grid
        return logits[:n].reshape(self.grid, self.grid), logits[n:].reshape(self.grid, self.grid)

    def to_json(self) -> dict:
        out = {name: arr.tolist() for name, arr in self.arrays().items()}
        out["grid"] = self.grid
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ToyRegressor":
        return cls(
            np.asarray(data["weights"], dtype=float),
            np.asarray(data["bias"], dtype=float),
            np.asarray(data["att_weights"], dtype=float),
            np.asarray(data["att_bias"], dtype=float),
            int(data["grid"]),
        )


def forward(model: ToyRegressor, features: FloatArray) -> PoseDelta9:
    """
    Regress a relative pose.

    :param model: The regressor.
    :param features: ``(F,)`` feature vector.

    :return: PoseDelta9 with translation squashed into [-1, 1].
    """
    raw = model.raw(features)
    return PoseDelta9(np.tanh(raw[:3]), Rot6D.from_vector(raw[3:]))


# -- features -------------------------------------------------------------------


def _centroid(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    return np.array([xs.mean(), ys.mean()]) if xs.size else np.zeros(2)


def _shape_moments(mask: np.ndarray) -> np.ndarray:
    """Area fraction, normalized second central moments and eccentricity."""
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return np.zeros(5)
    scale = float(mask.shape[0] * mask.shape[1])
    dx, dy = xs - xs.mean(), ys - ys.mean()
    mu20, mu11, mu02 = (dx * dx).mean(), (dx * dy).mean(), (dy * dy).mean()
    spread = math.sqrt(max((mu20 - mu02) ** 2 + 4.0 * mu11 * mu11, 0.0))
    major, minor = (mu20 + mu02 + spread) / 2.0, (mu20 + mu02 - spread) / 2.0
    eccentricity = math.sqrt(max(1.0 - minor / major, 0.0)) if major > 0.0 else 0.0
    return np.array([xs.size / scale, mu20 / scale * 100.0, mu11 / scale * 100.0, mu02 / scale * 100.0, eccentricity])


def frame_features(observed: RgbdFrame, predicted: RgbdFrame, max_delta: float = config.MAX_DELTA_TRANS) -> FloatArray:
    """
    11 hand-crafted features of an observed/predicted pair: mean depth
    difference over the overlapping silhouettes, silhouette centroid
    displacement, shape moments of the observed silhouette, and mean RGB
    difference.

    :return: ``(11,)`` array
    """
    if observed.depth.shape != predicted.depth.shape:
        raise DimensionMismatch("Observed and predicted frames differ in size.")
    overlap = observed.fg_mask & predicted.fg_mask & (observed.depth > 0) & (predicted.depth > 0)
    if overlap.any():
        depth_diff = (observed.depth[overlap].astype(float) - predicted.depth[overlap].astype(float)).mean()
        depth_feature = depth_diff / 1000.0 / max_delta
        rgb_diff = (observed.rgb[overlap].astype(float) - predicted.rgb[overlap].astype(float)).mean(axis=0) / 255.0
    else:
        depth_feature, rgb_diff = 0.0, np.zeros(3)
    if observed.fg_mask.any() and predicted.fg_mask.any():
        shift = (_centroid(observed.fg_mask) - _centroid(predicted.fg_mask)) / PIXEL_SCALE
    else:
        shift = np.zeros(2)
    return np.concatenate([[depth_feature], shift, _shape_moments(observed.fg_mask), rgb_diff])


def downsample_mask(mask: np.ndarray, grid: int) -> BinaryMask:
    """Cell is set when at least half of its pixels are set."""
    small = cv2.resize(np.asarray(mask, dtype=np.float32), (grid, grid), interpolation=cv2.INTER_AREA)
    return BinaryMask(small >= 0.5)


@dataclass(frozen=True)
class TrainingSample:
    features: FloatArray
    target: PoseDelta9
    lambda_gs: RotationMatrix = field(default_factory=lambda: np.eye(3))
    unoccl_mask: Optional[BinaryMask] = None
    fg_mask: Optional[BinaryMask] = None

    @property
    def gt_rot(self) -> RotationMatrix:
        return matrix_from_rot6d(self.target.rot)


def training_samples(
    samples: Sequence[Sample],
    lambda_gs: RotationMatrix,
    grid: int = config.ATTENTION_GRID,
    max_delta: float = config.MAX_DELTA_TRANS,
) -> List[TrainingSample]:
    """Turn generated frame pairs into feature/target pairs with downsampled masks."""
    return [
        TrainingSample(
            features=frame_features(s.observed, s.predicted, max_delta),
            target=s.gt_delta,
            lambda_gs=np.asarray(lambda_gs, dtype=float),
            unoccl_mask=downsample_mask(s.observed.unoccl_mask, grid),
            fg_mask=downsample_mask(s.observed.fg_mask, grid),
        )
        for s in samples
    ]


# -- optimization -----------------------------------------------------------------


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    restart_period: int = 10
    lr_min: float = 1e-5
    warmup_epochs: int = 25
    batch_size: int = 16
    epochs: int = 50
    b2: int = config.BANK_SIZE
    weighting: WeightingScheme = "learnable"
    max_delta: float = config.MAX_DELTA_TRANS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0.0 or self.lr_min < 0.0 or self.lr_min > self.lr:
            raise ValueError("Learning rates must satisfy 0 <= lr_min <= lr.")
        if not 0.0 <= self.weight_decay < 1.0:
            raise ValueError("weight_decay must lie in [0, 1).")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0.")
        for name in ("restart_period", "batch_size", "epochs", "b2"):
            validate_positive_int(getattr(self, name), name)
        if self.weighting not in ("learnable", "sum", "standardized"):
            raise ValueError(f"Unknown weighting scheme '{self.weighting}'.")


def lr_at(cfg: OptimConfig, epoch: float) -> float:
    """
    Cosine annealing from ``lr`` to ``lr_min`` that restarts every
    ``restart_period`` epochs.

    :param epoch: Fractional epoch count.
    """
    t = math.fmod(epoch, cfg.restart_period) / cfg.restart_period
    return cfg.lr_min + (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * t)) / 2.0


class AdamW:
    """
    Adam with decoupled weight decay. Decay multiplies the named arrays by
    ``1 - weight_decay`` before the moment update, independent of the
    learning rate.
    """

    def __init__(self, weight_decay: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, FloatArray] = {}
        self.v: Dict[str, FloatArray] = {}

    def step(
        self,
        params: Dict[str, FloatArray],
        grads: Dict[str, FloatArray],
        lr: float,
        decay: Sequence[str] = (),
    ) -> None:
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            p = params[name]
            if name in decay:
                p *= 1.0 - self.weight_decay
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.asarray(v, dtype=float) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=float) for k, v in state["v"].items()}


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    trans_err_mm: float
    rot_err_deg: float
    weights: TaskWeights
    phase: str


HISTORY_COLUMNS = ["epoch", "loss", "trans_err_mm", "rot_err_deg", "v1", "v2", "s1", "s2", "s3", "s4"]


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    skipped: int = 0
    task_weights: TaskWeights = field(default_factory=TaskWeights)
    bank: Optional[SymmetryBank] = None
    optimizer: Optional[AdamW] = None
    oracle_labels: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    def to_rows(self) -> List[List[float]]:
        return [
            [r.epoch, r.loss, r.trans_err_mm, r.rot_err_deg, *r.weights.as_array().tolist()]
            for r in self.records
        ]

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(HISTORY_COLUMNS)
            for row in self.to_rows():
                writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


@dataclass
class _Step:
    loss: float
    trans_err_mm: float
    rot_err_deg: float
    grads: Dict[str, FloatArray]
    raw_losses: Optional[Tuple[float, float, float]] = None
    label: Optional[int] = None


def _head_grads(features: FloatArray, d_raw: FloatArray) -> Dict[str, FloatArray]:
    return {"weights": np.outer(features, d_raw), "bias": d_raw}


def _errors(trans: FloatArray, rot_hat: RotationMatrix, target: PoseDelta9, gt_rot: RotationMatrix, max_delta: float) -> Tuple[float, float]:
    trans_mm = float(np.linalg.norm((trans - target.trans) * max_delta) * 1000.0)
    return trans_mm, math.degrees(geodesic_distance(rot_hat, gt_rot))


def _warmup_step(model: ToyRegressor, sample: TrainingSample, max_delta: float) -> _Step:
    raw = model.raw(sample.features)
    trans = np.tanh(raw[:3])
    pred = PoseDelta9(trans, Rot6D.from_vector(raw[3:]))
    g = logcosh_grad(pred, sample.target)
    d_raw = np.concatenate([g[:3] * (1.0 - trans * trans), g[3:]])
    try:
        rot_hat = matrix_from_rot6d(pred.rot)
    except DegenerateInput as e:
        raise NonDifferentiablePoint(str(e)) from e
    trans_mm, rot_deg = _errors(trans, rot_hat, sample.target, sample.gt_rot, max_delta)
    return _Step(logcosh(pred, sample.target), trans_mm, rot_deg, _head_grads(sample.features, d_raw))


def _main_step(
    model: ToyRegressor,
    sample: TrainingSample,
    w: TaskWeights,
    bank: Optional[SymmetryBank],
    cfg: OptimConfig,
    states: Sequence[WelfordState],
) -> _Step:
    raw = model.raw(sample.features)
    trans = np.tanh(raw[:3])
    rot6 = raw[3:]
    gt_rot = sample.gt_rot
    try:
        rot_hat = matrix_from_rot6d(Rot6D.from_vector(rot6))
    except DegenerateInput as e:
        raise NonDifferentiablePoint(str(e)) from e

    label = None
    g_star = np.eye(3)
    if bank is not None:
        label = select_oracle(bank, rot_hat, gt_rot, sample.lambda_gs)
        g_star = bank.matrix(label)

    track = loss_track_terms(trans, rot6, w.v1, w.v2, sample.target.trans, gt_rot, sample.lambda_gs, g_star)

    n = model.grid * model.grid
    if sample.unoccl_mask is not None and sample.fg_mask is not None:
        logits_un, logits_fg = model.attention_logits(sample.features)
        l_un, g_un = bce_from_logits(logits_un, sample.unoccl_mask)
        l_fg, g_fg = bce_from_logits(logits_fg, sample.fg_mask)
    else:
        l_un, l_fg = 0.0, 0.0
        g_un = g_fg = np.zeros((model.grid, model.grid))

    combined = combine_task_losses([track.value, l_un, l_fg], w, cfg.weighting, states)
    c_track, c_un, c_fg = combined.coefficients

    d_raw = np.concatenate([c_track * track.d_trans * (1.0 - trans * trans), c_track * track.d_rot6])
    grads = _head_grads(sample.features, d_raw)
    d_att = np.concatenate([c_un * g_un.reshape(n), c_fg * g_fg.reshape(n)])
    grads["att_weights"] = np.outer(sample.features, d_att)
    grads["att_bias"] = d_att
    grads["task"] = np.concatenate([c_track * track.d_v, combined.d_s, [0.0]])
    if bank is not None:
        selected = np.zeros((bank.size, 3, 3))
        selected[label] = c_track * track.d_g
        grads["bank"] = bank.params_vjp(selected)

    trans_mm, rot_deg = _errors(trans, rot_hat @ g_star, sample.target, gt_rot, cfg.max_delta)
    return _Step(combined.value, trans_mm, rot_deg, grads, (track.value, l_un, l_fg), label)


def train(
    model: ToyRegressor,
    dataset: Sequence[TrainingSample],
    cfg: OptimConfig,
    bank: Optional[SymmetryBank] = None,
) -> TrainHistory:
    """
    Train the regressor in place.

    Epochs before ``warmup_epochs`` minimize LogCosh on the raw outputs with
    the task weights and bank frozen. Later epochs minimize the weighted
    multi-task loss, plus the bank uniformity penalty when a bank of two or
    more entries is given, choosing each sample's symmetry entry by loss
    argmin. The logged epoch loss includes the weighted penalty. Samples at
    non-differentiable points are skipped and counted.

    :param model: Regressor, updated in place.
    :param dataset: Training samples.
    :param cfg: Optimizer configuration.
    :param bank: Optional symmetry bank, trained alongside the model.

    :return: TrainHistory with the final task weights and bank.
    """
    if not dataset:
        raise ValueError("Training needs a nonempty dataset.")
    rng = np.random.default_rng(cfg.seed)
    params: Dict[str, FloatArray] = {name: arr for name, arr in model.arrays().items()}
    params["task"] = np.zeros(6)
    if bank is not None:
        params["bank"] = bank.params.copy()
    optimizer = AdamW(cfg.weight_decay)
    history = TrainHistory(optimizer=optimizer)
    states = [WelfordState(), WelfordState(), WelfordState()]
    n = len(dataset)
    n_batches = math.ceil(n / cfg.batch_size)

    for epoch in range(cfg.epochs):
        warm = epoch < cfg.warmup_epochs
        order = rng.permutation(n)
        totals = np.zeros(3)
        used_total = 0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            weights = TaskWeights.from_array(params["task"])
            current_bank = bank.with_params(params["bank"]) if bank is not None else None
            grads = {name: np.zeros_like(arr) for name, arr in params.items()}
            batch_loss, used = 0.0, 0
            for i in idx:
                try:
                    if warm:
                        step = _warmup_step(model, dataset[i], cfg.max_delta)
                    else:
                        step = _main_step(model, dataset[i], weights, current_bank, cfg, states)
                except NonDifferentiablePoint as e:
                    history.skipped += 1
                    logger.debug("Skipped sample %d in epoch %d: %s", i, epoch, e)
                    continue
                for name, g in step.grads.items():
                    grads[name] += g
                if step.raw_losses is not None:
                    states = [welford_update(s, x) for s, x in zip(states, step.raw_losses)]
                batch_loss += step.loss
                totals += (step.loss, step.trans_err_mm, step.rot_err_deg)
                used += 1
            if used == 0:
                continue
            used_total += used
            grads = {name: g / used for name, g in grads.items()}

            # a single entry has no pairwise distance to spread
            if current_bank is not None and current_bank.size >= 2 and not warm:
                penalty, d_penalty = uniformity_penalty_grad(current_bank)
                e4 = math.exp(-weights.s4)
                grads["bank"] += e4 * d_penalty
                grads["task"][5] += 1.0 - e4 * penalty
                totals[0] += (e4 * penalty + weights.s4) * used

            if warm:
                grads = {name: g for name, g in grads.items() if name in MODEL_ARRAYS}
            optimizer.step(params, grads, lr_at(cfg, epoch + b / n_batches), decay=MODEL_ARRAYS)

        means = totals / max(used_total, 1)
        record = EpochRecord(
            epoch=epoch,
            loss=float(means[0]),
            trans_err_mm=float(means[1]),
            rot_err_deg=float(means[2]),
            weights=TaskWeights.from_array(params["task"]),
            phase="warmup" if warm else "main",
        )
        history.records.append(record)
        logger.info(
            "epoch %d (%s): loss %.5f, trans %.2f mm, rot %.2f deg",
            epoch, record.phase, record.loss, record.trans_err_mm, record.rot_err_deg,
        )  # fmt: skip

    history.task_weights = TaskWeights.from_array(params["task"])
    if bank is not None:
        history.bank = bank.with_params(params["bank"])
        history.oracle_labels = oracle_labels(model, dataset, history.bank)
    return history


def oracle_labels(model: ToyRegressor, dataset: Sequence[TrainingSample], bank: SymmetryBank) -> List[int]:
    """Loss-argmin bank index of each sample under the current model."""
    labels = []
    for sample in dataset:
        pred = forward(model, sample.features)
        try:
            rot_hat = matrix_from_rot6d(pred.rot)
        except DegenerateInput:
            labels.append(0)
            continue
        labels.append(select_oracle(bank, rot_hat, sample.gt_rot, sample.lambda_gs))
    return labels


# -- trainable selection ------------------------------------------------------------


@dataclass
class LinearScorer:
    """Linear classifier from features to one logit per bank entry."""

    weights: FloatArray
    bias: FloatArray

    @classmethod
    def zeros(cls, n_features: int, n_classes: int) -> "LinearScorer":
        return cls(np.zeros((n_features, n_classes)), np.zeros(n_classes))

    @property
    def n_classes(self) -> int:
        return int(self.bias.shape[0])

    def logits(self, features: FloatArray) -> FloatArray:
        return np.asarray(features, dtype=float) @ self.weights + self.bias

    def __call__(self, features: FloatArray) -> int:
        return int(np.argmax(self.logits(features)))

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "LinearScorer":
        return cls(np.asarray(data["weights"], dtype=float), np.asarray(data["bias"], dtype=float))


def train_scorer(
    features: FloatArray,
    labels: Sequence[int],
    n_classes: int,
    lr: float = 0.5,
    steps: int = 500,
) -> LinearScorer:
    """
    Fit a :class:`LinearScorer` by full-batch gradient descent on the
    softmax cross entropy against oracle labels.

    :param features: ``(N, F)`` feature matrix.
    :param labels: ``(N,)`` oracle indices.
    :param n_classes: Bank size.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch("One label per feature row is required.")
    scorer = LinearScorer.zeros(x.shape[1], n_classes)
    onehot = np.eye(n_classes)[y]
    for _ in range(steps):
        logits = x @ scorer.weights + scorer.bias
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        d = (p - onehot) / x.shape[0]
        scorer.weights -= lr * x.T @ d
        scorer.bias -= lr * d.sum(axis=0)
    return scorer


def select_trainable(bank: SymmetryBank, scorer: LinearScorer, features: FloatArray) -> int:
    """
    Bank index with the highest scorer logit; ties go to the lowest index.

    :raises DimensionMismatch: If the scorer and the bank disagree in size.
    """
    if scorer.n_classes != bank.size:
        raise DimensionMismatch(f"Scorer has {scorer.n_classes} classes for a bank of {bank.size}.")
    return scorer(features)


def agreement_rate(selected: Sequence[int], oracle: Sequence[int]) -> float:
    a, b = np.asarray(selected), np.asarray(oracle)
    if a.shape != b.shape or a.size == 0:
        raise DimensionMismatch("Agreement needs two nonempty label lists of equal length.")
    return float(np.mean(a == b))


# -- checkpoints --------------------------------------------------------------------


@dataclass
class Checkpoint:
    model: ToyRegressor
    task_weights: TaskWeights
    bank: Optional[SymmetryBank]
    optimizer: Optional[dict]
    epoch: int
    max_delta: float = config.MAX_DELTA_TRANS
    scorer: Optional[LinearScorer] = None


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> None:
    data = {
        "model": checkpoint.model.to_json(),
        "task_weights": checkpoint.task_weights.as_array().tolist(),
        "bank": checkpoint.bank.to_json() if checkpoint.bank is not None else None,
        "optimizer": checkpoint.optimizer,
        "epoch": checkpoint.epoch,
        "max_delta": checkpoint.max_delta,
        "scorer": checkpoint.scorer.to_json() if checkpoint.scorer is not None else None,
    }
    Path(path).write_text(json.dumps(data, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    :raises FileNotFoundError: If the file does not exist.
    :raises ValueError: If it is not a checkpoint.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return Checkpoint(
            model=ToyRegressor.from_json(data["model"]),
            task_weights=TaskWeights.from_array(data["task_weights"]),
            bank=SymmetryBank.from_json(data["bank"]) if data.get("bank") else None,
            optimizer=data.get("optimizer"),
            epoch=int(data["epoch"]),
            max_delta=float(data.get("max_delta", config.MAX_DELTA_TRANS)),
            scorer=LinearScorer.from_json(data["scorer"]) if data.get("scorer") else None,
        )
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ValueError(f"'{path}' is not a valid checkpoint: {e}")
