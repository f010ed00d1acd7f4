"""Compare the numba kernels against their pure-numpy twins.

Times DBSCAN labelling and RANSAC inlier scoring on synthetic workloads at a
few sizes, reporting the median wall time per call and the speedup. The first
numba call per kernel is excluded from timing (JIT compilation; it is disk
cached afterwards). Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 500 2000 8000 --repeats 9
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from colm.core import RigidTransform, apply_transform, rot_z
from colm.kernels import dbscan_labels, numba_enabled, ransac_inlier_counts


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def _dbscan_cloud(n: int, rng: np.random.Generator) -> np.ndarray:
    centers = rng.uniform(-30.0, 30.0, (max(n // 60, 2), 3))
    picks = rng.integers(0, len(centers), n)
    return centers[picks] + rng.normal(0.0, 0.4, (n, 3))


def _ransac_problem(n: int, iterations: int, rng: np.random.Generator):
    src = rng.uniform(-60.0, 60.0, (n, 3))
    transform = RigidTransform(rot_z(rng.uniform(0.0, 2 * np.pi)),
                               rng.uniform(-3.0, 3.0, 3))
    dst = apply_transform(transform, src) + rng.normal(0.0, 0.05, (n, 3))
    outliers = rng.choice(n, size=n // 3, replace=False)
    dst[outliers] = rng.uniform(-60.0, 60.0, (len(outliers), 3))
    samples = rng.integers(0, n, (iterations, 3)).astype(np.int64)
    return src, dst, samples


def bench_dbscan(sizes: list[int], repeats: int, seed: int, fast: bool) -> None:
    print("DBSCAN labelling (eps=0.5, min_pts=5)")
    print(f"{'points':>8} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for n in sizes:
        rng = np.random.default_rng([seed, n])
        pts = _dbscan_cloud(n, rng)
        dbscan_labels(pts, 0.5, 5, use_numba=fast)  # JIT warmup
        t_np = _median_time(lambda: dbscan_labels(pts, 0.5, 5, use_numba=False),
                            repeats)
        t_nb = _median_time(lambda: dbscan_labels(pts, 0.5, 5, use_numba=fast),
                            repeats)
        print(f"{n:>8} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>8.1f}x")


def bench_ransac(sizes: list[int], repeats: int, seed: int, fast: bool) -> None:
    iterations = 2048
    print(f"RANSAC inlier scoring ({iterations} triples, tol=0.6)")
    print(f"{'corrs':>8} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for n in sizes:
        rng = np.random.default_rng([seed, n, 1])
        src, dst, samples = _ransac_problem(n, iterations, rng)
        ransac_inlier_counts(src, dst, samples, 0.6, use_numba=fast)  # JIT warmup
        t_np = _median_time(
            lambda: ransac_inlier_counts(src, dst, samples, 0.6, use_numba=False),
            repeats,
        )
        t_nb = _median_time(
            lambda: ransac_inlier_counts(src, dst, samples, 0.6, use_numba=fast),
            repeats,
        )
        print(f"{n:>8} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>8.1f}x")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[200, 1000, 4000],
                        help="workload sizes (points for DBSCAN, "
                             "correspondences for RANSAC)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timed repetitions per cell (median reported)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    fast = numba_enabled()
    if not fast:
        print("note: numba paths are disabled in this environment "
              "(missing numba or COLM_NO_NUMBA set); the 'numba' column "
              "falls back to the numpy implementation")
    bench_dbscan(args.sizes, args.repeats, args.seed, fast)
    print()
    bench_ransac(args.sizes, args.repeats, args.seed, fast)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
