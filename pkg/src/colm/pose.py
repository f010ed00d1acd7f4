"""Rigid pose solvers and registration metrics.

Three estimators over matched object centroids: closed-form weighted Kabsch,
RANSAC with 3-point resampling, and class-gated centroid ICP refinement.
Metrics: translation error, rotation error, registration recall.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from . import kernels
from .core import (
    ColmError,
    CorrespondenceSet,
    ObjectSet,
    RigidTransform,
    apply_transform,
    as_points,
)


class PoseError(ColmError):
    pass


class InsufficientPairsError(PoseError):
    pass


class DegenerateGeometryError(PoseError):
    pass


class NoModelError(PoseError):
    pass


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 2048
    tolerance: float = 0.6
    min_sample: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.min_sample != 3:
            raise ValueError("only 3-point minimal samples are supported")


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 30
    radius: float = 2.0
    epsilon: float = 1e-9

    def __post_init__(self) -> None:
        if self.max_iterations < 1 or self.radius <= 0 or self.epsilon <= 0:
            raise ValueError("IcpConfig fields must all be positive")


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    inliers: CorrespondenceSet
    solver: str


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    no_overlap: bool
    iterations: int
    residual: float


# ----------------------------- solvers --------------------------------------

_RANK_TOL = 1e-9


def weighted_svd(src, dst, weights=None) -> RigidTransform:
    """Closed-form weighted Kabsch: the transform minimizing
    sum_i w_i ||R s_i + t - d_i||^2.

    Needs at least 3 pairs with positive total weight and a cross-covariance
    of rank >= 2 (pairs not all collinear).
    """
    s = as_points(src)
    d = as_points(dst)
    if s.shape != d.shape:
        raise ValueError(f"point counts differ: {s.shape} vs {d.shape}")
    n = s.shape[0]
    if n < 3:
        raise InsufficientPairsError(f"need >= 3 pairs, got {n}")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise ValueError(f"got {w.shape[0]} weights for {n} pairs")
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0 or (w > 0).sum() < 3:
        raise InsufficientPairsError("need >= 3 pairs with nonzero weight")

    w = w / total
    mu_s = w @ s
    mu_d = w @ d
    h = (w[:, None] * (s - mu_s)).T @ (d - mu_d)
    u, sigma, vt = np.linalg.svd(h)
    if sigma[1] <= _RANK_TOL * max(sigma[0], 1e-300):
        raise DegenerateGeometryError(
            "cross-covariance rank < 2 (pairs collinear or coincident)"
        )
    v = vt.T
    det = np.linalg.det(v @ u.T)
    rot = v @ np.diag([1.0, 1.0, det]) @ u.T
    return RigidTransform(rot, mu_d - rot @ mu_s)


def _matched_points(corr: CorrespondenceSet, objs_s: ObjectSet, objs_m: ObjectSet):
    idx_s = corr.pairs[:, 0]
    idx_m = corr.pairs[:, 1]
    if idx_s.size and (idx_s.max() >= len(objs_s) or idx_m.max() >= len(objs_m)):
        raise ValueError("correspondence indices exceed object set sizes")
    return objs_s.centroids[idx_s], objs_m.centroids[idx_m]


def svd_register(corr: CorrespondenceSet, objs_s: ObjectSet,
                 objs_m: ObjectSet) -> RegistrationResult:
    """Weighted Kabsch over all correspondences, weighted by their scores."""
    src, dst = _matched_points(corr, objs_s, objs_m)
    transform = weighted_svd(src, dst, corr.weights)
    return RegistrationResult(transform, corr, "svd")


def ransac_register(corr: CorrespondenceSet, objs_s: ObjectSet, objs_m: ObjectSet,
                    cfg: RansacConfig | None = None) -> RegistrationResult:
    """Fixed-iteration RANSAC over correspondences.

    Each iteration fits an unweighted Kabsch model to 3 distinct pairs and
    counts pairs within the distance tolerance; degenerate (collinear)
    samples count zero, which amounts to resampling. The best model is refit
    with weighted_svd on its inliers. Deterministic under cfg.seed.
    """
    cfg = cfg or RansacConfig()
    src, dst = _matched_points(corr, objs_s, objs_m)
    n = src.shape[0]
    if n < 3:
        raise InsufficientPairsError(f"need >= 3 correspondences, got {n}")

    rng = np.random.default_rng(cfg.seed)
    samples = rng.random((cfg.iterations, n)).argsort(axis=1)[:, :3]
    samples = np.ascontiguousarray(samples)
    counts = kernels.ransac_inlier_counts(src, dst, samples, cfg.tolerance)
    best = int(np.argmax(counts))
    if counts[best] < 3:
        raise NoModelError(
            f"no sample reached 3 inliers in {cfg.iterations} iterations"
        )

    rot, trans = kernels.fit_triple(src[samples[best]], dst[samples[best]])
    residual_sq = ((src @ rot.T + trans - dst) ** 2).sum(axis=1)
    mask = residual_sq <= cfg.tolerance**2
    inliers = CorrespondenceSet(corr.pairs[mask], corr.weights[mask])
    try:
        transform = weighted_svd(src[mask], dst[mask], corr.weights[mask])
    except (DegenerateGeometryError, InsufficientPairsError):
        transform = RigidTransform(rot, trans)
    return RegistrationResult(transform, inliers, "ransac")


def _gated_pairs(moved: NDArray[np.float64], classes_s, dst: NDArray[np.float64],
                 classes_m, radius: float):
    """Nearest same-class target per source, within radius. Returns index
    pairs and their distances."""
    d2 = ((moved[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
    d2 = np.where(classes_s[:, None] == classes_m[None, :], d2, np.inf)
    j = d2.argmin(axis=1)
    dist = np.sqrt(d2[np.arange(len(moved)), j])
    keep = dist <= radius
    return np.nonzero(keep)[0], j[keep], dist[keep]


def icp_refine(objs_s: ObjectSet, objs_m: ObjectSet, init: RigidTransform,
               cfg: IcpConfig | None = None) -> IcpResult:
    """Point-to-point ICP on centroids with class-gated nearest-neighbour
    pairing inside cfg.radius.

    Iterates Kabsch until the mean pair residual changes by less than
    cfg.epsilon or iterations run out. The returned transform never scores a
    higher mean pair residual than init; when no pairs fall inside the radius
    at the start, init comes back unchanged with no_overlap set.
    """
    cfg = cfg or IcpConfig()
    if len(objs_s) < 3 or len(objs_m) < 3:
        raise InsufficientPairsError("both object sets need >= 3 objects")

    def pairing(transform: RigidTransform):
        moved = apply_transform(transform, objs_s.centroids)
        i, j, dist = _gated_pairs(moved, objs_s.classes, objs_m.centroids,
                                  objs_m.classes, cfg.radius)
        residual = float(dist.mean()) if dist.size else np.inf
        return i, j, residual

    i, j, residual = pairing(init)
    if i.size == 0:
        return IcpResult(init, True, 0, np.inf)

    best_t, best_res = init, residual
    current, prev_res = init, residual
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        if i.size < 3:
            break
        try:
            current = weighted_svd(objs_s.centroids[i], objs_m.centroids[j])
        except DegenerateGeometryError:
            break
        i, j, residual = pairing(current)
        if residual < best_res:
            best_t, best_res = current, residual
        if abs(prev_res - residual) < cfg.epsilon:
            break
        prev_res = residual
    return IcpResult(best_t, False, iterations, best_res)


def with_icp(result: RegistrationResult, objs_s: ObjectSet, objs_m: ObjectSet,
             cfg: IcpConfig | None = None) -> RegistrationResult:
    """Refine a registration result in place of its transform; the solver tag
    gains a "+icp" suffix."""
    refined = icp_refine(objs_s, objs_m, result.transform, cfg)
    return replace(result, transform=refined.transform,
                   solver=result.solver + "+icp")


def icp_refine_dense(src_points, dst_points, init: RigidTransform,
                     cfg: IcpConfig | None = None,
                     labels_s=None, labels_m=None) -> IcpResult:
    """ICP over raw point clouds for when dense scans are available.

    Same loop as icp_refine; pairing is plain nearest neighbour unless both
    label arrays are given, in which case it is class-gated. Distances are
    computed in row chunks to bound memory.
    """
    cfg = cfg or IcpConfig()
    src = as_points(src_points)
    dst = as_points(dst_points)
    if src.shape[0] < 3 or dst.shape[0] < 3:
        raise InsufficientPairsError("both clouds need >= 3 points")
    gated = labels_s is not None and labels_m is not None
    ls = np.asarray(labels_s).reshape(-1) if gated else None
    lm = np.asarray(labels_m).reshape(-1) if gated else None

    def pairing(transform: RigidTransform):
        moved = apply_transform(transform, src)
        n = moved.shape[0]
        j = np.empty(n, dtype=np.int64)
        dist = np.empty(n)
        step = max(1, 8_000_000 // max(1, dst.shape[0]))
        for lo in range(0, n, step):
            hi = min(lo + step, n)
            d2 = ((moved[lo:hi, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
            if gated:
                d2 = np.where(ls[lo:hi, None] == lm[None, :], d2, np.inf)
            j[lo:hi] = d2.argmin(axis=1)
            dist[lo:hi] = np.sqrt(d2[np.arange(hi - lo), j[lo:hi]])
        keep = dist <= cfg.radius
        i = np.nonzero(keep)[0]
        residual = float(dist[keep].mean()) if keep.any() else np.inf
        return i, j[keep], residual

    i, j, residual = pairing(init)
    if i.size == 0:
        return IcpResult(init, True, 0, np.inf)
    best_t, best_res = init, residual
    current, prev_res = init, residual
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        if i.size < 3:
            break
        try:
            current = weighted_svd(src[i], dst[j])
        except DegenerateGeometryError:
            break
        i, j, residual = pairing(current)
        if residual < best_res:
            best_t, best_res = current, residual
        if abs(prev_res - residual) < cfg.epsilon:
            break
        prev_res = residual
    return IcpResult(best_t, False, iterations, best_res)


# ----------------------------- metrics --------------------------------------


def rte(t_hat, t_gt) -> float:
    """Relative translation error: Euclidean distance in metres."""
    a = np.asarray(t_hat, dtype=np.float64).reshape(3)
    b = np.asarray(t_gt, dtype=np.float64).reshape(3)
    return float(np.linalg.norm(a - b))


def rre(rot_hat, rot_gt) -> float:
    """Relative rotation error in radians: acos((tr(R_hat^T R_gt) - 1) / 2),
    trace argument clamped to [-1, 1]."""
    a = np.asarray(rot_hat, dtype=np.float64)
    b = np.asarray(rot_gt, dtype=np.float64)
    cos = (np.trace(a.T @ b) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def registration_recall(results, tau_t: float, tau_r_deg: float
                        ) -> tuple[float, float, float]:
    """Fraction of registrations with RTE < tau_t metres AND RRE < tau_r_deg
    degrees (both strict), plus mean RTE / RRE over the successes only.

    `results` rows are (rte in metres, rre in radians); the returned means
    keep those units. Means are NaN when nothing succeeds.
    """
    arr = np.asarray(results, dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise PoseError("registration_recall needs at least one result")
    ok = (arr[:, 0] < tau_t) & (np.degrees(arr[:, 1]) < tau_r_deg)
    recall = float(ok.mean())
    if ok.any():
        return recall, float(arr[ok, 0].mean()), float(arr[ok, 1].mean())
    return recall, float("nan"), float("nan")
