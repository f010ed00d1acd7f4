"""Semantic distance-aware circle loss, exact gradients and a toy trainer.

Supervision pairs objects by ground-truth alignment: a source object anchors
on every same-class target closer than tau_match, with a distance ratio
rho = 1 - d / tau_match weighting how hard its positives are pulled. The loss
is the average of the source-anchored and target-anchored circle losses over
squared feature distances. Gradients come from the reverse-mode graph in
:mod:`colm.autodiff` and match central finite differences.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import autodiff as ad
from .autodiff import Tensor
from .core import (
    ColmError,
    ObjectSet,
    RigidTransform,
    apply_transform,
    compose,
    invert,
    rot_z,
)
from .net import MatchParams, hybrid_features, mask_semantic, similarity

log = logging.getLogger(__name__)


class LossError(ColmError):
    pass


class NoAnchorsError(LossError):
    pass


class DivergenceError(LossError):
    def __init__(self, message: str, history: list["EpochStats"]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class LossConfig:
    tau_match: float = 1.0
    gamma: float = 40.0
    delta_pos: float = 0.1
    delta_neg: float = 1.4
    normalize_features: bool = True

    def __post_init__(self) -> None:
        if self.tau_match <= 0:
            raise ValueError(f"tau_match must be positive, got {self.tau_match}")
        if self.delta_neg <= self.delta_pos:
            raise ValueError("delta_neg must exceed delta_pos")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class MatchSupervision:
    """Positive-pair mask and distance ratios for one scan pair.

    pos_mask[i, j] marks target j as a positive of source i; rho holds
    1 - d / tau_match for positives and 0 elsewhere. Anchors are the rows
    (sources) or columns (targets) with at least one positive; every
    non-positive entry in said row/column is a negative.
    """

    pos_mask: NDArray[np.bool_]
    rho: NDArray[np.float64]

    def __post_init__(self) -> None:
        pos = np.asarray(self.pos_mask, dtype=bool)
        rho = np.asarray(self.rho, dtype=np.float64)
        if pos.shape != rho.shape or pos.ndim != 2:
            raise ValueError(
                f"pos_mask {pos.shape} and rho {rho.shape} must be equal 2-D shapes"
            )
        if (rho[pos] < 0).any() or (rho[pos] > 1).any():
            raise ValueError("rho must lie in [0, 1] on positive pairs")
        if (rho[~pos] != 0).any():
            raise ValueError("rho must be 0 off the positive mask")
        object.__setattr__(self, "pos_mask", pos)
        object.__setattr__(self, "rho", rho)

    @property
    def anchors_source(self) -> NDArray[np.int64]:
        return np.nonzero(self.pos_mask.any(axis=1))[0]

    @property
    def anchors_target(self) -> NDArray[np.int64]:
        return np.nonzero(self.pos_mask.any(axis=0))[0]

    def swapped(self) -> "MatchSupervision":
        return MatchSupervision(self.pos_mask.T, self.rho.T)


def build_supervision(objs_s: ObjectSet, objs_m: ObjectSet, t_gt: RigidTransform,
                      cfg: LossConfig | None = None) -> MatchSupervision:
    """Positives: aligned centroid distance < tau_match and equal class."""
    cfg = cfg or LossConfig()
    if len(objs_s) == 0 or len(objs_m) == 0:
        raise ValueError("both object sets must be non-empty")
    aligned = apply_transform(t_gt, objs_s.centroids)
    dist = np.sqrt(((aligned[:, None, :] - objs_m.centroids[None, :, :]) ** 2).sum(axis=2))
    pos = (dist < cfg.tau_match) & (objs_s.classes[:, None] == objs_m.classes[None, :])
    rho = np.where(pos, 1.0 - dist / cfg.tau_match, 0.0)
    return MatchSupervision(pos, rho)


def _feature_sq_dists(h_s: Tensor, h_m: Tensor, normalize: bool) -> Tensor:
    if normalize:
        h_s = ad.l2_normalize(h_s)
        h_m = ad.l2_normalize(h_m)
    a2 = ad.sum_(ad.square(h_s), axis=1, keepdims=True)
    b2 = ad.reshape(ad.sum_(ad.square(h_m), axis=1), (1, h_m.data.shape[0]))
    cross = ad.matmul(h_s, ad.transpose(h_m))
    return ad.add(ad.sub(a2, ad.mul(cross, 2.0)), b2)


def _side_loss(h: Tensor, pos_mask: NDArray[np.bool_], rho: NDArray[np.float64],
               cfg: LossConfig) -> Tensor | None:
    """Mean over anchor rows of
    log(1 + sum_pos exp(sqrt(rho) gamma [h - dp]_+^2)
          * sum_neg exp(gamma [dn - h]_+^2))."""
    anchor = pos_mask.any(axis=1)
    n_anchors = int(anchor.sum())
    if n_anchors == 0:
        return None
    exp_pos = ad.mul(ad.square(ad.relu(ad.sub(h, cfg.delta_pos))),
                     cfg.gamma * np.sqrt(rho))
    exp_neg = ad.mul(ad.square(ad.relu(ad.sub(cfg.delta_neg, h))), cfg.gamma)
    lse_pos = ad.masked_logsumexp(exp_pos, pos_mask, axis=1)
    lse_neg = ad.masked_logsumexp(exp_neg, ~pos_mask, axis=1)
    per_anchor = ad.softplus(ad.add(lse_pos, lse_neg))
    picked = ad.mul(per_anchor, anchor.astype(np.float64))
    return ad.mul(ad.sum_(picked), 1.0 / n_anchors)


def circle_loss(h_s: Tensor, h_m: Tensor, sup: MatchSupervision,
                cfg: LossConfig | None = None) -> Tensor:
    """Scalar loss tensor: average of the source- and target-anchored sides.

    A side with no anchors contributes 0 (logged as a warning); the average
    always divides by two.
    """
    cfg = cfg or LossConfig()
    if h_s.data.shape[1] != h_m.data.shape[1]:
        raise ValueError(
            f"feature dims differ: {h_s.data.shape[1]} vs {h_m.data.shape[1]}"
        )
    if sup.pos_mask.shape != (h_s.data.shape[0], h_m.data.shape[0]):
        raise ValueError(
            f"supervision shape {sup.pos_mask.shape} does not match features "
            f"({h_s.data.shape[0]}, {h_m.data.shape[0]})"
        )
    h = _feature_sq_dists(h_s, h_m, cfg.normalize_features)
    side_s = _side_loss(h, sup.pos_mask, sup.rho, cfg)
    side_m = _side_loss(ad.transpose(h), sup.pos_mask.T, sup.rho.T, cfg)
    if side_s is None and side_m is None:
        return Tensor(0.0)
    if side_s is None or side_m is None:
        log.warning("circle_loss: one side has no anchors and contributes 0")
    total = side_s if side_m is None else side_m if side_s is None \
        else ad.add(side_s, side_m)
    return ad.mul(total, 0.5)


def grad_params(batch, params: MatchParams, cfg: LossConfig | None = None
                ) -> tuple[float, dict[str, NDArray[np.float64]]]:
    """Mean circle loss over the batch and its gradient for every parameter.

    Batch items are (O_s, O_m, T_gt) triples (or objects with source/target/
    transform attributes). Items whose supervision has no positives are
    skipped; if every item is skipped, raises NoAnchorsError.
    """
    cfg = cfg or LossConfig()
    params.zero_grad()
    total: Tensor | None = None
    used = 0
    for item in batch:
        objs_s, objs_m, t_gt = _unpack(item)
        sup = build_supervision(objs_s, objs_m, t_gt, cfg)
        if not sup.pos_mask.any():
            continue
        h_s, h_m = hybrid_features(objs_s, objs_m, params)
        item_loss = circle_loss(h_s, h_m, sup, cfg)
        total = item_loss if total is None else ad.add(total, item_loss)
        used += 1
    if used == 0:
        raise NoAnchorsError("no batch item produced any anchor")
    mean = ad.mul(total, 1.0 / used)
    mean.backward()
    grads = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.tensors.items()
    }
    return float(mean.data), grads


def _unpack(item) -> tuple[ObjectSet, ObjectSet, RigidTransform]:
    if isinstance(item, (tuple, list)):
        objs_s, objs_m, t_gt = item
        return objs_s, objs_m, t_gt
    return item.source, item.target, item.transform


# ----------------------------- optimizer ------------------------------------


class Adam:
    """Standard ADAM with bias correction; state keyed by parameter name."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, NDArray[np.float64]] = {}
        self._v: dict[str, NDArray[np.float64]] = {}

    def step(self, tensors: dict[str, Tensor],
             grads: dict[str, NDArray[np.float64]]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, tensor in tensors.items():
            g = grads[name]
            m = self._m.setdefault(name, np.zeros_like(tensor.data))
            v = self._v.setdefault(name, np.zeros_like(tensor.data))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class PlateauScheduler:
    """Halve the learning rate once the loss has not improved (strictly) for
    `patience` consecutive steps. With a constant loss fed from step 1 the
    first halving lands on step 6."""

    def __init__(self, lr: float, patience: int = 5, factor: float = 0.5):
        if patience < 1 or not 0 < factor < 1 or lr <= 0:
            raise ValueError("need lr > 0, patience >= 1 and 0 < factor < 1")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = np.inf
        self.bad_steps = 0

    def step(self, value: float) -> float:
        if value < self.best:
            self.best = value
            self.bad_steps = 0
        else:
            self.bad_steps += 1
            if self.bad_steps >= self.patience:
                self.lr *= self.factor
                self.bad_steps = 0
        return self.lr


# ----------------------------- training loop --------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 1e-3
    plateau_patience: int = 5
    yaw_max_deg: float = 360.0
    jitter_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if (self.batch_size < 1 or self.epochs < 1 or self.learning_rate <= 0
                or self.plateau_patience < 1 or self.yaw_max_deg < 0
                or self.jitter_sigma < 0):
            raise ValueError("TrainConfig hyperparameters must be positive")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_precision: float
    wall_s: float


@dataclass
class TrainResult:
    params: MatchParams
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def train_losses(self) -> NDArray[np.float64]:
        return np.array([e.train_loss for e in self.epochs])


def _augment(objs_s: ObjectSet, t_gt: RigidTransform, rng: np.random.Generator,
             cfg: TrainConfig) -> tuple[ObjectSet, RigidTransform]:
    """Random yaw plus centroid jitter on the source side; the ground truth
    is re-derived so it still maps the augmented source onto the target.

    Draw order per call: yaw angle, then one (n, 3) normal jitter block.
    """
    yaw = rng.uniform(0.0, np.radians(cfg.yaw_max_deg))
    noise = rng.normal(0.0, cfg.jitter_sigma, objs_s.centroids.shape)
    spin = RigidTransform(rot_z(yaw), np.zeros(3))
    moved = apply_transform(spin, objs_s.centroids) + noise
    return ObjectSet(moved, objs_s.classes), compose(t_gt, invert(spin))


def match_precision(pairs, params: MatchParams,
                    cfg: LossConfig | None = None) -> float:
    """Top-1 match precision: over all source rows with any same-class
    candidate, the fraction whose best similarity entry is a true positive."""
    cfg = cfg or LossConfig()
    correct = 0
    counted = 0
    for item in pairs:
        objs_s, objs_m, t_gt = _unpack(item)
        sup = build_supervision(objs_s, objs_m, t_gt, cfg)
        with ad.no_grad():
            h_s, h_m = hybrid_features(objs_s, objs_m, params)
            sim = similarity(h_s, h_m, normalize=params.config.normalize_features)
        masked = mask_semantic(sim, objs_s.classes, objs_m.classes)
        rows = masked.any(axis=1)
        best = masked.argmax(axis=1)
        hits = sup.pos_mask[np.arange(len(objs_s)), best] & rows
        correct += int(hits.sum())
        counted += int(rows.sum())
    return correct / counted if counted else 0.0


def train_toy(train_pairs, val_pairs, params: MatchParams,
              cfg: TrainConfig | None = None,
              loss_cfg: LossConfig | None = None) -> TrainResult:
    """ADAM training over registration pairs with on-the-fly augmentation.

    Per epoch: shuffle, rebuild each batch with fresh yaw/jitter augmentation,
    step ADAM on the mean batch loss, then score top-1 match precision on the
    held-out pairs. The learning rate halves after `plateau_patience` epochs
    without strict improvement; zero-anchor batches are skipped and do not
    count toward the plateau. Raises DivergenceError (carrying the history so
    far) if a batch loss goes non-finite. Bitwise-reproducible under cfg.seed
    apart from the wall-clock column.
    """
    cfg = cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()
    train_pairs = list(train_pairs)
    val_pairs = list(val_pairs)
    if not train_pairs:
        raise ValueError("train_toy needs at least one training pair")

    optim = Adam(lr=cfg.learning_rate)
    sched = PlateauScheduler(cfg.learning_rate, patience=cfg.plateau_patience)
    result = TrainResult(params)

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train_pairs))
        batch_losses: list[float] = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch = []
            for i in idx:
                objs_s, objs_m, t_gt = _unpack(train_pairs[i])
                aug_s, aug_t = _augment(objs_s, t_gt, rng, cfg)
                batch.append((aug_s, objs_m, aug_t))
            try:
                loss_value, grads = grad_params(batch, params, loss_cfg)
            except NoAnchorsError:
                continue
            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}", result.epochs
                )
            optim.step(params.tensors, grads)
            batch_losses.append(loss_value)

        train_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")
        precision = match_precision(val_pairs, params, loss_cfg) if val_pairs else 0.0
        lr_before = sched.lr
        if batch_losses:
            optim.lr = sched.step(train_loss)
        result.epochs.append(EpochStats(
            epoch, lr_before, train_loss, precision,
            time.perf_counter() - start,
        ))
        log.info("epoch %d: lr %.2e loss %.4f val %.3f",
                 epoch, lr_before, train_loss, precision)
    return result
