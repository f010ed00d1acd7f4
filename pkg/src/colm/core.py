"""Shared geometric domain types and exact SE(3) arithmetic.

Everything downstream (clustering, codecs, matching, solvers) passes these
types around: labelled point clouds, compact object sets (centroid + class),
rigid transforms and correspondence sets. All geometry is float64; the codec
alone quantizes to float32 on disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

Points: TypeAlias = NDArray[np.float64]

# Constructors reject rotations further than this from SO(3).
_ROTATION_TOL = 1e-6
# compose() re-orthonormalizes when the product drifts beyond this.
_DRIFT_TOL = 1e-12


class ColmError(Exception):
    """Base class for every domain error raised by this package."""


# ----------------------------- array validation -----------------------------


def as_points(values, *, name: str = "points") -> Points:
    """Coerce to a float64 (n, 3) array, rejecting non-finite coordinates."""
    pts = np.asarray(values, dtype=np.float64)
    if pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


# ----------------------------- domain types ---------------------------------


@dataclass(frozen=True)
class LabeledPointCloud:
    """A point cloud with one small non-negative class id per point."""

    points: Points
    labels: NDArray[np.uint16]

    def __post_init__(self) -> None:
        pts = as_points(self.points)
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != pts.shape[0]:
            raise ValueError(
                f"labels must be (n,) matching {pts.shape[0]} points, "
                f"got {labels.shape}"
            )
        if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
            raise ValueError("labels must fit in an unsigned 16-bit class id")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint16)))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ObjectSet:
    """Compact scan representation: per-object centroid and class byte."""

    centroids: Points
    classes: NDArray[np.uint8]

    def __post_init__(self) -> None:
        cents = as_points(self.centroids, name="centroids")
        classes = np.asarray(self.classes)
        if classes.ndim != 1 or classes.shape[0] != cents.shape[0]:
            raise ValueError(
                f"classes must be (n,) matching {cents.shape[0]} centroids, "
                f"got {classes.shape}"
            )
        if classes.size and (classes.min() < 0 or classes.max() > 255):
            raise ValueError("class ids must fit in one byte")
        object.__setattr__(self, "centroids", _frozen(cents))
        object.__setattr__(self, "classes", _frozen(classes.astype(np.uint8)))

    def __len__(self) -> int:
        return self.centroids.shape[0]


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element stored as a 3x3 rotation matrix and a translation."""

    rotation: NDArray[np.float64]
    translation: NDArray[np.float64]

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if trans.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {trans.shape}")
        if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
            raise ValueError("transform contains non-finite values")
        ortho = np.abs(rot.T @ rot - np.eye(3)).max()
        det = np.linalg.det(rot)
        if ortho > _ROTATION_TOL or abs(det - 1.0) > _ROTATION_TOL:
            raise ValueError(
                f"not a rotation matrix: |R^T R - I| = {ortho:.3e}, det = {det:.6f}"
            )
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(trans))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_flat(cls, values) -> "RigidTransform":
        """Build from 12 row-major [R | t] values."""
        flat = np.asarray(values, dtype=np.float64).reshape(-1)
        if flat.shape != (12,):
            raise ValueError(f"expected 12 values (row-major [R|t]), got {flat.shape}")
        mat = flat.reshape(3, 4)
        return cls(mat[:, :3], mat[:, 3])

    def to_flat(self) -> NDArray[np.float64]:
        """Row-major [R | t] as a flat 12-vector."""
        return np.hstack([self.rotation, self.translation[:, None]]).reshape(-1)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Index pairs between two object sets with non-negative weights."""

    pairs: NDArray[np.int64]
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        pairs = np.asarray(self.pairs, dtype=np.int64)
        if pairs.size == 0:
            pairs = pairs.reshape(0, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValueError(f"pairs must have shape (m, 2), got {pairs.shape}")
        if weights.shape[0] != pairs.shape[0]:
            raise ValueError(
                f"{weights.shape[0]} weights for {pairs.shape[0]} pairs"
            )
        if pairs.size and pairs.min() < 0:
            raise ValueError("pair indices must be non-negative")
        if weights.size and (weights.min() < 0 or not np.isfinite(weights).all()):
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "pairs", _frozen(pairs))
        object.__setattr__(self, "weights", _frozen(weights))

    def __len__(self) -> int:
        return self.pairs.shape[0]


# ----------------------------- SE(3) arithmetic -----------------------------


def rot_z(angle_rad: float) -> NDArray[np.float64]:
    """Rotation matrix about the +z axis."""
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _reorthonormalize(rot: NDArray[np.float64]) -> NDArray[np.float64]:
    u, _, vt = np.linalg.svd(rot)
    fixed = u @ vt
    if np.linalg.det(fixed) < 0.0:
        fixed = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return fixed


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition applying `b` first, then `a`: compose(a, b)(x) = a(b(x))."""
    rot = a.rotation @ b.rotation
    if np.abs(rot.T @ rot - np.eye(3)).max() > _DRIFT_TOL:
        rot = _reorthonormalize(rot)
    return RigidTransform(rot, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    return RigidTransform(t.rotation.T, -(t.rotation.T @ t.translation))


def apply_transform(t: RigidTransform, pts) -> Points:
    """Map points through the transform: R p + t per row (or single 3-vector)."""
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim == 1:
        return t.rotation @ arr + t.translation
    return arr @ t.rotation.T + t.translation[None, :]


def transform_objects(t: RigidTransform, objects: ObjectSet) -> ObjectSet:
    """Apply a rigid transform to every centroid, classes unchanged."""
    return ObjectSet(apply_transform(t, objects.centroids), objects.classes)
