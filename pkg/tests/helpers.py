"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from colm.core import ObjectSet, RigidTransform


def golden_objects(n: int) -> ObjectSet:
    """The deterministic object sets behind the committed golden records."""
    rng = np.random.default_rng(1000 + n)
    return ObjectSet(
        rng.uniform(-80.0, 80.0, (n, 3)),
        rng.integers(0, 7, n).astype(np.uint8),
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation from a QR decomposition."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0.0:
        q[:, 2] = -q[:, 2]
    return q


def random_rigid(rng: np.random.Generator, t_scale: float = 10.0) -> RigidTransform:
    return RigidTransform(
        random_rotation(rng), rng.uniform(-t_scale, t_scale, 3)
    )


def central_diff(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Elementwise central finite differences of a scalar function."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = fn()
        flat[i] = old - eps
        lo = fn()
        flat[i] = old
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise relative error with a floored denominator."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def grad_check_err(analytic: np.ndarray, fd: np.ndarray,
                   floor: float = 1e-8) -> float:
    """Max error between gradients, relative to the tensor's magnitude.

    Elementwise relative error is meaningless for near-zero gradient entries:
    there the central-difference truncation term dominates both values, so
    even an exact analytic gradient shows O(1) elementwise disagreement.
    Normalizing by the largest entry of either tensor keeps the check strict
    where the gradient actually lives.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(fd).max(initial=0.0), floor)
    return float(np.abs(analytic - fd).max(initial=0.0) / scale)
