"""Hot numeric kernels with two interchangeable implementations.

The numba-compiled versions are the default; setting the environment variable
``COLM_NO_NUMBA=1`` (or numba being unavailable) selects pure-numpy fallbacks.
Both paths are written against the same arithmetic so that, for identical
inputs, they return identical results; `benchmarks/bench_kernels.py` times
them against each other.

Kernels here are deliberately low-level (plain arrays in, plain arrays out);
the domain-facing wrappers live in `extract` and `pose`.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.typing import NDArray

ENV_FLAG = "COLM_NO_NUMBA"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


def numba_enabled() -> bool:
    """True when the numba paths are active (numba present, env flag unset)."""
    if not _HAVE_NUMBA:
        return False
    return os.environ.get(ENV_FLAG, "").lower() not in ("1", "true", "yes")


# ============================================================================
# DBSCAN labelling
# ============================================================================
# Conventions shared by both paths (and by the brute-force test oracle):
#   - the eps-neighbourhood of a point includes the point itself, so a point
#     is core iff it has >= min_pts neighbours counting itself;
#   - clusters are the connected components of the eps-graph restricted to
#     core points;
#   - a non-core point within eps of some core point joins the cluster of its
#     lowest-index core neighbour; otherwise it is noise (-1);
#   - returned ids are contiguous from 0 in order of first member index.


@njit(cache=True)
def _grid_setup(pts: np.ndarray, eps: float):
    n = pts.shape[0]
    mins = np.empty(3)
    for d in range(3):
        mn = pts[0, d]
        for i in range(1, n):
            if pts[i, d] < mn:
                mn = pts[i, d]
        mins[d] = mn
    cell = np.empty((n, 3), np.int64)
    dims = np.ones(3, np.int64)
    for i in range(n):
        for d in range(3):
            c = np.int64(np.floor((pts[i, d] - mins[d]) / eps))
            cell[i, d] = c
            if c + 1 > dims[d]:
                dims[d] = c + 1
    key = cell[:, 0] * (dims[1] * dims[2]) + cell[:, 1] * dims[2] + cell[:, 2]
    order = np.argsort(key)
    skey = key[order]
    return cell, dims, skey, order


@njit(cache=True, inline="always")
def _grid_neighbors(pts, i, eps2, cell, dims, skey, order, buf):
    """Indices within eps of point i (self included), written into buf."""
    cnt = 0
    for dx in range(-1, 2):
        x = cell[i, 0] + dx
        if x < 0 or x >= dims[0]:
            continue
        for dy in range(-1, 2):
            y = cell[i, 1] + dy
            if y < 0 or y >= dims[1]:
                continue
            for dz in range(-1, 2):
                z = cell[i, 2] + dz
                if z < 0 or z >= dims[2]:
                    continue
                k = x * (dims[1] * dims[2]) + y * dims[2] + z
                lo = np.searchsorted(skey, k)
                hi = np.searchsorted(skey, k + 1)
                for t in range(lo, hi):
                    j = order[t]
                    ddx = pts[i, 0] - pts[j, 0]
                    ddy = pts[i, 1] - pts[j, 1]
                    ddz = pts[i, 2] - pts[j, 2]
                    if ddx * ddx + ddy * ddy + ddz * ddz <= eps2:
                        buf[cnt] = j
                        cnt += 1
    return cnt


@njit(cache=True)
def _dbscan_numba_impl(pts: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    n = pts.shape[0]
    labels = np.full(n, -1, np.int64)
    if n == 0:
        return labels
    eps2 = eps * eps
    cell, dims, skey, order = _grid_setup(pts, eps)
    buf = np.empty(n, np.int64)

    core = np.zeros(n, np.bool_)
    for i in range(n):
        if _grid_neighbors(pts, i, eps2, cell, dims, skey, order, buf) >= min_pts:
            core[i] = True

    stack = np.empty(n, np.int64)
    cid = 0
    for s in range(n):
        if not core[s] or labels[s] >= 0:
            continue
        labels[s] = cid
        stack[0] = s
        top = 1
        while top > 0:
            top -= 1
            u = stack[top]
            cnt = _grid_neighbors(pts, u, eps2, cell, dims, skey, order, buf)
            for t in range(cnt):
                v = buf[t]
                if core[v] and labels[v] < 0:
                    labels[v] = cid
                    stack[top] = v
                    top += 1
        cid += 1

    for i in range(n):
        if core[i]:
            continue
        cnt = _grid_neighbors(pts, i, eps2, cell, dims, skey, order, buf)
        best = -1
        for t in range(cnt):
            v = buf[t]
            if core[v] and (best < 0 or v < best):
                best = v
        if best >= 0:
            labels[i] = labels[best]
    return labels


def _dbscan_numpy_impl(pts: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    n = pts.shape[0]
    labels = np.full(n, -1, np.int64)
    if n == 0:
        return labels
    eps2 = eps * eps

    def neighbors(i: int) -> np.ndarray:
        d2 = ((pts - pts[i]) ** 2).sum(axis=1)
        return np.nonzero(d2 <= eps2)[0]

    core = np.zeros(n, dtype=bool)
    block = 2048
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        d2 = ((pts[lo:hi, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        core[lo:hi] = (d2 <= eps2).sum(axis=1) >= min_pts

    cid = 0
    for s in range(n):
        if not core[s] or labels[s] >= 0:
            continue
        labels[s] = cid
        stack = [s]
        while stack:
            u = stack.pop()
            for v in neighbors(u):
                if core[v] and labels[v] < 0:
                    labels[v] = cid
                    stack.append(int(v))
        cid += 1

    for i in np.nonzero(~core)[0]:
        near_core = neighbors(i)
        near_core = near_core[core[near_core]]
        if near_core.size:
            labels[i] = labels[near_core.min()]
    return labels


def _renumber_by_first_member(labels: np.ndarray) -> np.ndarray:
    """Remap cluster ids to be contiguous from 0, ordered by first member."""
    mask = labels >= 0
    if not mask.any():
        return labels
    uniq, first = np.unique(labels[mask], return_index=True)
    positions = np.nonzero(mask)[0][first]
    remap = np.empty(int(uniq.max()) + 1, dtype=np.int64)
    remap[uniq[np.argsort(positions, kind="stable")]] = np.arange(uniq.size)
    out = labels.copy()
    out[mask] = remap[labels[mask]]
    return out


def dbscan_labels(
    points: NDArray[np.float64], eps: float, min_pts: int, *, use_numba: bool | None = None
) -> NDArray[np.int64]:
    """Cluster ids per point (-1 = noise) under the conventions above."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    fast = numba_enabled() if use_numba is None else use_numba
    raw = (
        _dbscan_numba_impl(pts, float(eps), int(min_pts))
        if fast
        else _dbscan_numpy_impl(pts, float(eps), int(min_pts))
    )
    return _renumber_by_first_member(raw)


# ============================================================================
# RANSAC minimal-sample scoring
# ============================================================================
# Sample index triples are drawn host-side (pose module) so that the two
# paths consume identical randomness. Each triple gets an unweighted 3-point
# Kabsch fit; the kernel reports the inlier count per iteration, comparing
# squared residuals against tol^2 in both paths. Triples whose source points
# are (near-)collinear score 0.

_DEGENERATE_CROSS2 = 1e-24


@njit(cache=True)
def _ransac_counts_numba_impl(src, dst, samples, tol2):
    iters = samples.shape[0]
    m = src.shape[0]
    counts = np.zeros(iters, np.int64)
    for s in range(iters):
        i0, i1, i2 = samples[s, 0], samples[s, 1], samples[s, 2]
        ux = src[i1, 0] - src[i0, 0]
        uy = src[i1, 1] - src[i0, 1]
        uz = src[i1, 2] - src[i0, 2]
        vx = src[i2, 0] - src[i0, 0]
        vy = src[i2, 1] - src[i0, 1]
        vz = src[i2, 2] - src[i0, 2]
        cx = uy * vz - uz * vy
        cy = uz * vx - ux * vz
        cz = ux * vy - uy * vx
        if cx * cx + cy * cy + cz * cz <= _DEGENERATE_CROSS2:
            continue

        mus = np.zeros(3)
        mud = np.zeros(3)
        for d in range(3):
            mus[d] = (src[i0, d] + src[i1, d] + src[i2, d]) / 3.0
            mud[d] = (dst[i0, d] + dst[i1, d] + dst[i2, d]) / 3.0
        h = np.zeros((3, 3))
        for p in range(3):
            idx = samples[s, p]
            for a in range(3):
                for b in range(3):
                    h[a, b] += (src[idx, a] - mus[a]) * (dst[idx, b] - mud[b])
        u_, _, vt_ = np.linalg.svd(h)
        v_ = vt_.T
        det = np.linalg.det(v_ @ u_.T)
        flip = np.eye(3)
        flip[2, 2] = det
        rot = v_ @ flip @ u_.T
        tx = mud[0] - (rot[0, 0] * mus[0] + rot[0, 1] * mus[1] + rot[0, 2] * mus[2])
        ty = mud[1] - (rot[1, 0] * mus[0] + rot[1, 1] * mus[1] + rot[1, 2] * mus[2])
        tz = mud[2] - (rot[2, 0] * mus[0] + rot[2, 1] * mus[1] + rot[2, 2] * mus[2])

        cnt = 0
        for j in range(m):
            rx = rot[0, 0] * src[j, 0] + rot[0, 1] * src[j, 1] + rot[0, 2] * src[j, 2] + tx - dst[j, 0]
            ry = rot[1, 0] * src[j, 0] + rot[1, 1] * src[j, 1] + rot[1, 2] * src[j, 2] + ty - dst[j, 1]
            rz = rot[2, 0] * src[j, 0] + rot[2, 1] * src[j, 1] + rot[2, 2] * src[j, 2] + tz - dst[j, 2]
            if rx * rx + ry * ry + rz * rz <= tol2:
                cnt += 1
        counts[s] = cnt
    return counts


def _ransac_counts_numpy_impl(src, dst, samples, tol2):
    iters = samples.shape[0]
    counts = np.zeros(iters, dtype=np.int64)
    tri_s = src[samples]  # (iters, 3, 3)
    tri_d = dst[samples]

    u = tri_s[:, 1] - tri_s[:, 0]
    v = tri_s[:, 2] - tri_s[:, 0]
    cross = np.cross(u, v)
    ok = (cross**2).sum(axis=1) > _DEGENERATE_CROSS2
    if not ok.any():
        return counts

    tri_s = tri_s[ok]
    tri_d = tri_d[ok]
    mus = tri_s.mean(axis=1)
    mud = tri_d.mean(axis=1)
    h = np.einsum("kpa,kpb->kab", tri_s - mus[:, None, :], tri_d - mud[:, None, :])
    u_, _, vt_ = np.linalg.svd(h)
    v_ = np.swapaxes(vt_, 1, 2)
    det = np.linalg.det(v_ @ np.swapaxes(u_, 1, 2))
    flip = np.broadcast_to(np.eye(3), v_.shape).copy()
    flip[:, 2, 2] = det
    rot = v_ @ flip @ np.swapaxes(u_, 1, 2)
    trans = mud - np.einsum("kab,kb->ka", rot, mus)

    moved = np.einsum("kab,jb->kja", rot, src) + trans[:, None, :]
    res2 = ((moved - dst[None, :, :]) ** 2).sum(axis=2)
    counts[ok] = (res2 <= tol2).sum(axis=1)
    return counts


def ransac_inlier_counts(
    src: NDArray[np.float64],
    dst: NDArray[np.float64],
    samples: NDArray[np.int64],
    tol: float,
    *,
    use_numba: bool | None = None,
) -> NDArray[np.int64]:
    """Inlier count per sampled triple; degenerate source triples count 0."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    dst = np.ascontiguousarray(dst, dtype=np.float64)
    samples = np.ascontiguousarray(samples, dtype=np.int64)
    fast = numba_enabled() if use_numba is None else use_numba
    impl = _ransac_counts_numba_impl if fast else _ransac_counts_numpy_impl
    return impl(src, dst, samples, float(tol) * float(tol))


def fit_triple(src3: NDArray[np.float64], dst3: NDArray[np.float64]):
    """Unweighted 3-point Kabsch used to rebuild a scored model host-side.

    Returns (rotation, translation); callers must have screened degeneracy.
    """
    mus = src3.mean(axis=0)
    mud = dst3.mean(axis=0)
    h = (src3 - mus).T @ (dst3 - mud)
    u_, _, vt_ = np.linalg.svd(h)
    v_ = vt_.T
    flip = np.eye(3)
    flip[2, 2] = np.linalg.det(v_ @ u_.T)
    rot = v_ @ flip @ u_.T
    return rot, mud - rot @ mus
