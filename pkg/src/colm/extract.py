"""Turn a labelled point cloud into a compact object set.

Points are filtered to the configured static classes, clustered per class
with DBSCAN, and each cluster is reduced to (centroid, class). Noise points
are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .core import LabeledPointCloud, ObjectSet, Points, as_points
from .kernels import dbscan_labels

# Canonical internal ids 0..6 for the classes that persist across revisits.
STATIC_CLASS_NAMES: tuple[str, ...] = (
    "sidewalk",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "pole",
    "traffic_sign",
)
DEFAULT_STATIC_CLASSES = frozenset(range(len(STATIC_CLASS_NAMES)))


@dataclass(frozen=True)
class ExtractConfig:
    eps: float = 0.5
    min_pts: int = 5
    static_classes: frozenset[int] = DEFAULT_STATIC_CLASSES
    max_points: int = 24000

    def __post_init__(self) -> None:
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.min_pts < 1:
            raise ValueError(f"min_pts must be >= 1, got {self.min_pts}")
        if not self.static_classes:
            raise ValueError("static_classes must be non-empty")
        if self.max_points < 0:
            raise ValueError(f"max_points must be >= 0, got {self.max_points}")
        object.__setattr__(self, "static_classes", frozenset(self.static_classes))


def cluster_dbscan(points, eps: float, min_pts: int) -> NDArray[np.int64]:
    """DBSCAN cluster ids (-1 = noise), contiguous from 0 by first member.

    A point's eps-neighbourhood includes the point itself, so with
    min_pts = 1 every point is a core point and isolated points become
    singleton clusters rather than noise.
    """
    pts = as_points(points)
    return dbscan_labels(pts, eps, min_pts)


def subsample(scan: LabeledPointCloud, n: int, seed: int) -> LabeledPointCloud:
    """Uniform subsample without replacement; identity when already small."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if len(scan) <= n:
        return scan
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(scan), size=n, replace=False)
    idx.sort()
    return LabeledPointCloud(scan.points[idx], scan.labels[idx])


def extract_objects(scan: LabeledPointCloud, cfg: ExtractConfig) -> ObjectSet:
    """Cluster each static class independently and keep cluster centroids.

    Output is ordered by (class id, first member index within the class
    subset); clouds without static points yield an empty set.
    """
    static = np.array(sorted(cfg.static_classes), dtype=np.int64)
    keep = np.isin(scan.labels.astype(np.int64), static)
    pts: Points = scan.points[keep]
    labels = scan.labels[keep]

    centroids: list[np.ndarray] = []
    classes: list[int] = []
    for cls in static:
        cls_pts = pts[labels == cls]
        if cls_pts.shape[0] == 0:
            continue
        ids = dbscan_labels(cls_pts, cfg.eps, cfg.min_pts)
        for cid in range(int(ids.max()) + 1 if ids.size else 0):
            members = cls_pts[ids == cid]
            centroids.append(members.mean(axis=0))
            classes.append(int(cls))
    if not centroids:
        return ObjectSet(np.empty((0, 3)), np.empty(0, dtype=np.uint8))
    return ObjectSet(np.vstack(centroids), np.array(classes, dtype=np.uint8))


def extract_pipeline(scan: LabeledPointCloud, cfg: ExtractConfig, seed: int = 0) -> ObjectSet:
    """Subsample to the configured cap, then extract objects."""
    return extract_objects(subsample(scan, cfg.max_points, seed), cfg)
