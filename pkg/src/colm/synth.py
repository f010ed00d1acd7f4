"""Deterministic synthetic scenes and registration pairs.

Object-level stand-in for real drives: scenes are sets of class-labelled
centroids with a minimum spacing, revisits are yaw + planar translation with
jitter, drops, distractor inserts and label flips. Every operation is a pure
function of its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from .core import (
    ColmError,
    CorrespondenceSet,
    ObjectSet,
    RigidTransform,
    apply_transform,
    rot_z,
)

_NUM_STATIC_CLASSES = 7
_INSERT_PAD = 1.0


class SynthError(ColmError):
    pass


class RejectionExhaustedError(SynthError):
    pass


class EmptySurvivorsError(SynthError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    count_range: tuple[int, int] = (60, 240)
    extent: tuple[float, float, float] = (60.0, 60.0, 3.0)
    class_probs: tuple[float, ...] = (1.0 / _NUM_STATIC_CLASSES,) * _NUM_STATIC_CLASSES
    min_spacing: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"count_range must satisfy 1 <= lo <= hi, got {lo}..{hi}")
        if len(self.extent) != 3 or any(e <= 0 for e in self.extent):
            raise ValueError(f"extent must be three positive half-widths: {self.extent}")
        probs = np.asarray(self.class_probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 1 or (probs < 0).any():
            raise ValueError("class_probs must be non-negative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"class_probs must sum to 1, got {probs.sum()}")
        if self.min_spacing < 0:
            raise ValueError(f"min_spacing must be >= 0, got {self.min_spacing}")


@dataclass(frozen=True)
class PerturbConfig:
    yaw_max_deg: float = 360.0
    translation_max: float = 3.0
    jitter_sigma: float = 0.05
    drop_rate: float = 0.0
    insert_rate: float = 0.0
    flip_rate: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.drop_rate < 1:
            raise ValueError(f"drop_rate must be in [0, 1), got {self.drop_rate}")
        if not 0 <= self.flip_rate <= 1:
            raise ValueError(f"flip_rate must be in [0, 1], got {self.flip_rate}")
        if self.insert_rate < 0 or self.jitter_sigma < 0:
            raise ValueError("insert_rate and jitter_sigma must be >= 0")
        if self.yaw_max_deg < 0 or self.translation_max < 0:
            raise ValueError("yaw_max_deg and translation_max must be >= 0")


def generate_scene(cfg: SceneConfig) -> ObjectSet:
    """Sample a scene in the extent box, rejecting candidates closer than
    min_spacing to an accepted object. Draw order: object count, candidate
    positions (one uniform triple per attempt), then all classes.
    """
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.count_range
    count = int(rng.integers(lo, hi + 1))
    half = np.asarray(cfg.extent)
    spacing_sq = cfg.min_spacing**2

    accepted = np.empty((count, 3))
    n_ok = 0
    budget = 10_000 + 500 * count
    for _ in range(budget):
        if n_ok == count:
            break
        cand = rng.uniform(-half, half)
        if n_ok and (((accepted[:n_ok] - cand) ** 2).sum(axis=1) < spacing_sq).any():
            continue
        accepted[n_ok] = cand
        n_ok += 1
    if n_ok < count:
        raise RejectionExhaustedError(
            f"placed {n_ok}/{count} objects in {budget} attempts at "
            f"spacing {cfg.min_spacing} m"
        )
    probs = np.asarray(cfg.class_probs, dtype=np.float64)
    classes = rng.choice(probs.size, size=count, p=probs / probs.sum())
    return ObjectSet(accepted, classes.astype(np.uint8))


def perturb_scene(scene: ObjectSet, cfg: PerturbConfig, seed: int
                  ) -> tuple[ObjectSet, RigidTransform, NDArray[np.int64]]:
    """Simulate a revisit of the scene.

    Samples T_gt (yaw about z, planar translation), keeps each object with
    probability 1 - drop_rate, maps survivors through T_gt, jitters them,
    appends Poisson(insert_rate * n) distractors inside the survivors'
    padded bounding box, and flips labels at flip_rate. Returns the new set,
    T_gt, and a (k, 2) survivor map of (source index, output index) rows.

    Draw order: yaw; translation direction and magnitude; drop mask; jitter
    block; insert count, positions, classes; flip mask and offsets.
    """
    n = len(scene)
    if n == 0:
        raise ValueError("cannot perturb an empty scene")
    rng = np.random.default_rng(seed)

    yaw = rng.uniform(0.0, np.radians(cfg.yaw_max_deg))
    theta = rng.uniform(0.0, 2.0 * np.pi)
    radius = rng.uniform(0.0, cfg.translation_max)
    t_gt = RigidTransform(
        rot_z(yaw),
        np.array([radius * np.cos(theta), radius * np.sin(theta), 0.0]),
    )

    keep = rng.random(n) >= cfg.drop_rate
    src_idx = np.nonzero(keep)[0]
    if src_idx.size == 0:
        raise EmptySurvivorsError(f"all {n} objects dropped at rate {cfg.drop_rate}")

    moved = apply_transform(t_gt, scene.centroids[src_idx])
    moved = moved + rng.normal(0.0, cfg.jitter_sigma, moved.shape)
    classes = scene.classes[src_idx].copy()

    n_insert = int(rng.poisson(cfg.insert_rate * n))
    if n_insert:
        box_lo = moved.min(axis=0) - _INSERT_PAD
        box_hi = moved.max(axis=0) + _INSERT_PAD
        inserts = rng.uniform(box_lo, box_hi, (n_insert, 3))
        pool = np.unique(scene.classes)
        insert_classes = rng.choice(pool, size=n_insert)
    else:
        inserts = np.empty((0, 3))
        insert_classes = np.empty(0, dtype=np.uint8)

    if cfg.flip_rate > 0:
        k = max(_NUM_STATIC_CLASSES, int(scene.classes.max()) + 1)
        flip = rng.random(classes.size) < cfg.flip_rate
        offsets = rng.integers(1, k, size=classes.size)
        classes = np.where(flip, (classes.astype(np.int64) + offsets) % k,
                           classes).astype(np.uint8)

    out = ObjectSet(
        np.concatenate([moved, inserts]),
        np.concatenate([classes, insert_classes]),
    )
    survivor_map = np.stack([src_idx, np.arange(src_idx.size)], axis=1)
    return out, t_gt, survivor_map.astype(np.int64)


def gt_correspondences(objs_s: ObjectSet, objs_m: ObjectSet, t_gt: RigidTransform,
                       tol: float) -> CorrespondenceSet:
    """Ground-truth pairs: mutual nearest neighbours after T_gt alignment,
    strictly within tol and class-equal, each with weight 1."""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if len(objs_s) == 0 or len(objs_m) == 0:
        return CorrespondenceSet(np.empty((0, 2), dtype=np.int64), np.empty(0))
    aligned = apply_transform(t_gt, objs_s.centroids)
    d = np.sqrt(((aligned[:, None, :] - objs_m.centroids[None, :, :]) ** 2).sum(axis=2))
    d = np.where(objs_s.classes[:, None] == objs_m.classes[None, :], d, np.inf)
    fwd = d.argmin(axis=1)
    bwd = d.argmin(axis=0)
    rows = np.arange(len(objs_s))
    mutual = bwd[fwd] == rows
    close = d[rows, fwd] < tol
    keep = mutual & close
    pairs = np.stack([rows[keep], fwd[keep]], axis=1)
    return CorrespondenceSet(pairs, np.ones(keep.sum()))


@dataclass(frozen=True)
class RegistrationPair:
    """A source/target scene pair with the transform mapping source onto
    target, plus the survivor map linking their indices."""

    source: ObjectSet
    target: ObjectSet
    transform: RigidTransform
    survivor_map: NDArray[np.int64]


def make_registration_pairs(scene_cfg: SceneConfig, perturb_cfg: PerturbConfig,
                            count: int, seed: int = 0) -> list[RegistrationPair]:
    """Generate `count` independent pairs; pair i uses scene seed
    seed * 2_000_003 + 2 i and perturb seed one above it."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    pairs = []
    for i in range(count):
        base = seed * 2_000_003 + 2 * i
        scene = generate_scene(replace(scene_cfg, seed=base))
        target, t_gt, survivor_map = perturb_scene(scene, perturb_cfg, base + 1)
        pairs.append(RegistrationPair(scene, target, t_gt, survivor_map))
    return pairs
