"""Pose solvers (weighted Kabsch, RANSAC, ICP) and registration metrics."""

import numpy as np
import pytest

from colm.core import CorrespondenceSet, ObjectSet, RigidTransform, apply_transform
from colm.pose import (
    DegenerateGeometryError,
    IcpConfig,
    InsufficientPairsError,
    NoModelError,
    PoseError,
    RansacConfig,
    icp_refine,
    icp_refine_dense,
    ransac_register,
    registration_recall,
    rre,
    rte,
    svd_register,
    weighted_svd,
    with_icp,
)
from helpers import random_rigid


def _noiseless_instance(rng, n=20):
    t = random_rigid(rng)
    src = rng.uniform(-40.0, 40.0, (n, 3))
    return src, apply_transform(t, src), t


# ----------------------------- weighted Kabsch -------------------------------


def test_weighted_svd_exact_on_noiseless_data():
    rng = np.random.default_rng(70)
    for _ in range(100):
        src, dst, t = _noiseless_instance(rng)
        got = weighted_svd(src, dst)
        assert rte(got.translation, t.translation) < 1e-9
        assert rre(got.rotation, t.rotation) < 1e-7


def test_weighted_svd_ignores_zero_weight_outliers():
    rng = np.random.default_rng(71)
    src, dst, t = _noiseless_instance(rng, n=10)
    dst = dst.copy()
    dst[0] += 100.0  # corrupted pair, weighted out
    w = np.ones(10)
    w[0] = 0.0
    got = weighted_svd(src, dst, w)
    assert rte(got.translation, t.translation) < 1e-9
    assert rre(got.rotation, t.rotation) < 1e-7


def test_weighted_svd_weight_scale_invariance():
    rng = np.random.default_rng(72)
    src, dst, _ = _noiseless_instance(rng, n=8)
    dst = dst + rng.normal(0.0, 0.3, dst.shape)
    w = rng.uniform(0.1, 2.0, 8)
    a = weighted_svd(src, dst, w)
    b = weighted_svd(src, dst, w * 1000.0)
    np.testing.assert_allclose(a.rotation, b.rotation, atol=1e-12)
    np.testing.assert_allclose(a.translation, b.translation, atol=1e-12)


def _weighted_cost(t, src, dst, w):
    res = apply_transform(t, src) - dst
    return float((w * (res**2).sum(axis=1)).sum())


def test_weighted_svd_is_the_cost_minimizer():
    rng = np.random.default_rng(73)
    src, dst, _ = _noiseless_instance(rng, n=15)
    dst = dst + rng.normal(0.0, 0.5, dst.shape)
    w = rng.uniform(0.05, 1.0, 15)
    best = weighted_svd(src, dst, w)
    base_cost = _weighted_cost(best, src, dst, w)
    for _ in range(200):
        jitter = random_rigid(rng, t_scale=0.2)
        near = RigidTransform(
            jitter.rotation @ best.rotation if rng.random() < 0.5 else best.rotation,
            best.translation + rng.normal(0.0, 0.1, 3),
        )
        assert base_cost <= _weighted_cost(near, src, dst, w) + 1e-12


def test_weighted_svd_handles_reflection_cases():
    # Near-planar data tends to exercise the det(V U^T) = -1 branch.
    rng = np.random.default_rng(74)
    for _ in range(50):
        t = random_rigid(rng)
        src = rng.uniform(-10.0, 10.0, (6, 3))
        src[:, 2] *= 1e-6
        got = weighted_svd(src, apply_transform(t, src))
        assert np.linalg.det(got.rotation) == pytest.approx(1.0, abs=1e-9)
        assert rre(got.rotation, t.rotation) < 1e-6


def test_weighted_svd_validation():
    rng = np.random.default_rng(75)
    src, dst, _ = _noiseless_instance(rng, n=5)
    with pytest.raises(InsufficientPairsError, match=">= 3"):
        weighted_svd(src[:2], dst[:2])
    with pytest.raises(InsufficientPairsError, match="nonzero weight"):
        weighted_svd(src, dst, np.array([1.0, 1.0, 0.0, 0.0, 0.0]))
    with pytest.raises(ValueError, match="counts differ"):
        weighted_svd(src, dst[:4])
    with pytest.raises(ValueError, match="non-negative"):
        weighted_svd(src, dst, -np.ones(5))
    with pytest.raises(ValueError, match="weights for"):
        weighted_svd(src, dst, np.ones(4))
    line = np.outer(np.arange(5.0), np.array([1.0, 2.0, 0.5]))
    with pytest.raises(DegenerateGeometryError):
        weighted_svd(line, line)


# ----------------------------- registration wrappers -------------------------


def _corr_problem(rng, n=40, outliers=0):
    t = random_rigid(rng)
    objs_s = ObjectSet(rng.uniform(-40.0, 40.0, (n, 3)),
                       rng.integers(0, 7, n).astype(np.uint8))
    dst = apply_transform(t, objs_s.centroids)
    dst[:outliers] = rng.uniform(-40.0, 40.0, (outliers, 3))
    objs_m = ObjectSet(dst, objs_s.classes)
    pairs = np.stack([np.arange(n), np.arange(n)], axis=1)
    corr = CorrespondenceSet(pairs, np.ones(n))
    return corr, objs_s, objs_m, t


def test_svd_register_tags_and_recovers():
    rng = np.random.default_rng(76)
    corr, objs_s, objs_m, t = _corr_problem(rng)
    result = svd_register(corr, objs_s, objs_m)
    assert result.solver == "svd"
    assert rte(result.transform.translation, t.translation) < 1e-9
    assert len(result.inliers) == len(corr)


def test_ransac_rejects_outliers():
    rng = np.random.default_rng(77)
    for trial in range(10):
        corr, objs_s, objs_m, t = _corr_problem(rng, n=60, outliers=20)
        result = ransac_register(corr, objs_s, objs_m, RansacConfig(seed=trial))
        assert result.solver == "ransac"
        assert rte(result.transform.translation, t.translation) < 1e-6
        assert rre(result.transform.rotation, t.rotation) < 1e-6
        # All 20 corrupted pairs fall outside the inlier set.
        assert len(result.inliers) == 40
        assert result.inliers.pairs[:, 0].min() >= 20


def test_ransac_without_outliers_matches_svd():
    rng = np.random.default_rng(78)
    corr, objs_s, objs_m, _ = _corr_problem(rng, n=30)
    a = ransac_register(corr, objs_s, objs_m)
    b = svd_register(corr, objs_s, objs_m)
    np.testing.assert_allclose(a.transform.rotation, b.transform.rotation,
                               atol=1e-12)
    np.testing.assert_allclose(a.transform.translation, b.transform.translation,
                               atol=1e-12)
    assert len(a.inliers) == 30


def test_ransac_deterministic_under_seed():
    rng = np.random.default_rng(79)
    corr, objs_s, objs_m, _ = _corr_problem(rng, n=50, outliers=15)
    a = ransac_register(corr, objs_s, objs_m, RansacConfig(seed=3))
    b = ransac_register(corr, objs_s, objs_m, RansacConfig(seed=3))
    np.testing.assert_array_equal(a.transform.rotation, b.transform.rotation)
    np.testing.assert_array_equal(a.inliers.pairs, b.inliers.pairs)


def test_ransac_no_model_on_hopeless_pairs():
    # Collinear sources admit no valid minimal sample.
    line = np.outer(np.arange(6.0), np.array([1.0, 0.0, 0.0]))
    objs_s = ObjectSet(line, np.zeros(6, dtype=np.uint8))
    objs_m = ObjectSet(line[::-1].copy(), np.zeros(6, dtype=np.uint8))
    pairs = np.stack([np.arange(6), np.arange(6)], axis=1)
    corr = CorrespondenceSet(pairs, np.ones(6))
    with pytest.raises(NoModelError):
        ransac_register(corr, objs_s, objs_m, RansacConfig(iterations=16))
    with pytest.raises(InsufficientPairsError):
        ransac_register(CorrespondenceSet(pairs[:2], np.ones(2)), objs_s, objs_m)


def test_ransac_config_validation():
    with pytest.raises(ValueError, match="iterations"):
        RansacConfig(iterations=0)
    with pytest.raises(ValueError, match="tolerance"):
        RansacConfig(tolerance=0.0)
    with pytest.raises(ValueError, match="minimal"):
        RansacConfig(min_sample=4)


# ----------------------------- ICP ------------------------------------------


def _icp_problem(rng, n=30, jitter=0.0):
    t = random_rigid(rng, t_scale=2.0)
    objs_s = ObjectSet(rng.uniform(-20.0, 20.0, (n, 3)),
                       rng.integers(0, 4, n).astype(np.uint8))
    dst = apply_transform(t, objs_s.centroids)
    dst = dst + rng.normal(0.0, jitter, dst.shape)
    return objs_s, ObjectSet(dst, objs_s.classes), t


def test_icp_fixed_point_at_ground_truth():
    rng = np.random.default_rng(80)
    objs_s, objs_m, t = _icp_problem(rng)
    result = icp_refine(objs_s, objs_m, t)
    assert not result.no_overlap
    assert result.residual < 1e-9
    assert rte(result.transform.translation, t.translation) < 1e-9


def test_icp_improves_a_perturbed_init():
    rng = np.random.default_rng(81)
    objs_s, objs_m, t = _icp_problem(rng, n=40)
    rough = RigidTransform(t.rotation, t.translation + np.array([0.8, -0.5, 0.3]))
    result = icp_refine(objs_s, objs_m, rough)
    assert rte(result.transform.translation, t.translation) < 1e-6
    assert rre(result.transform.rotation, t.rotation) < 1e-6
    assert result.iterations >= 1


def test_icp_never_scores_worse_than_init():
    rng = np.random.default_rng(82)
    for _ in range(10):
        objs_s, objs_m, t = _icp_problem(rng, n=25, jitter=0.3)
        shift = RigidTransform(t.rotation, t.translation + rng.normal(0, 0.5, 3))
        result = icp_refine(objs_s, objs_m, shift, IcpConfig(radius=3.0))

        def residual_of(transform):
            moved = apply_transform(transform, objs_s.centroids)
            d2 = ((moved[:, None, :] - objs_m.centroids[None, :, :]) ** 2).sum(axis=2)
            gate = objs_s.classes[:, None] == objs_m.classes[None, :]
            d = np.sqrt(np.where(gate, d2, np.inf).min(axis=1))
            d = d[d <= 3.0]
            return d.mean() if d.size else np.inf

        assert residual_of(result.transform) <= residual_of(shift) + 1e-12


def test_icp_reports_no_overlap():
    rng = np.random.default_rng(83)
    objs_s, objs_m, t = _icp_problem(rng)
    away = RigidTransform(np.eye(3), np.array([500.0, 0.0, 0.0]))
    result = icp_refine(objs_s, objs_m, away, IcpConfig(radius=1.0))
    assert result.no_overlap
    assert result.iterations == 0
    assert result.residual == np.inf
    np.testing.assert_array_equal(result.transform.translation, away.translation)


def test_icp_validation():
    tiny = ObjectSet(np.zeros((2, 3)), np.zeros(2, dtype=np.uint8))
    with pytest.raises(InsufficientPairsError):
        icp_refine(tiny, tiny, RigidTransform.identity())
    with pytest.raises(ValueError):
        IcpConfig(max_iterations=0)


def test_with_icp_suffixes_solver():
    rng = np.random.default_rng(84)
    corr, objs_s, objs_m, t = _corr_problem(rng, n=25)
    refined = with_icp(ransac_register(corr, objs_s, objs_m), objs_s, objs_m)
    assert refined.solver == "ransac+icp"
    assert rte(refined.transform.translation, t.translation) < 1e-6


def test_icp_dense_with_and_without_gating():
    rng = np.random.default_rng(85)
    t = random_rigid(rng, t_scale=1.0)
    src = rng.uniform(-10.0, 10.0, (200, 3))
    labels = rng.integers(0, 3, 200)
    dst = apply_transform(t, src)
    rough = RigidTransform(t.rotation, t.translation + np.array([0.3, 0.0, 0.0]))
    plain = icp_refine_dense(src, dst, rough)
    gated = icp_refine_dense(src, dst, rough, labels_s=labels, labels_m=labels)
    for result in (plain, gated):
        assert rte(result.transform.translation, t.translation) < 1e-6
    with pytest.raises(InsufficientPairsError):
        icp_refine_dense(src[:2], dst[:2], rough)


# ----------------------------- metrics --------------------------------------


def test_rte_hand_values():
    assert rte(np.zeros(3), np.array([1.0, 2.0, 2.0])) == pytest.approx(3.0)
    assert rte(np.ones(3), np.ones(3)) == 0.0


def test_rre_hand_values():
    from colm.core import rot_z

    assert rre(np.eye(3), np.eye(3)) == 0.0
    one_deg = rre(rot_z(np.radians(1.0)), np.eye(3))
    assert one_deg == pytest.approx(np.radians(1.0), abs=1e-12)
    assert rre(rot_z(np.pi), np.eye(3)) == pytest.approx(np.pi, abs=1e-7)
    # The trace argument is clamped, so tiny drift cannot produce NaN.
    drifted = np.eye(3) * (1.0 + 1e-12)
    assert np.isfinite(rre(drifted, np.eye(3)))


def test_registration_recall_mixture():
    rows = [
        (0.1, np.radians(0.5)),   # success
        (0.3, np.radians(0.2)),   # rte at the threshold: strict, fails
        (0.2, np.radians(1.0)),   # rre at the threshold: strict, fails
        (0.2, np.radians(0.8)),   # success
        (5.0, np.radians(40.0)),  # plain failure
    ]
    recall, mean_t, mean_r = registration_recall(rows, 0.3, 1.0)
    assert recall == pytest.approx(2.0 / 5.0)
    assert mean_t == pytest.approx(0.15)
    assert mean_r == pytest.approx(np.radians(0.65), abs=1e-12)


def test_registration_recall_edge_cases():
    recall, mean_t, mean_r = registration_recall([(9.0, 3.0)], 0.5, 5.0)
    assert recall == 0.0
    assert np.isnan(mean_t) and np.isnan(mean_r)
    with pytest.raises(PoseError):
        registration_recall(np.empty((0, 2)), 0.5, 5.0)
