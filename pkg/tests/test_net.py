"""Matching network: parameters, edge conv, structure embedding, attention,
similarity head, checkpoints."""

from pathlib import Path

import numpy as np
import pytest

from colm import autodiff as ad
from colm.autodiff import Tensor
from colm.core import ObjectSet, apply_transform
from colm.net import (
    CheckpointError,
    DimensionMismatchError,
    EmptyObjectSetError,
    NetConfig,
    NoCorrespondencesError,
    UnknownClassError,
    _knn_indices,
    _sinusoid,
    attention_stack,
    decode_params,
    edgeconv_layer,
    encode_params,
    enhance,
    forward,
    geometric_structure_embedding,
    hybrid_features,
    init_params,
    load_params,
    mask_semantic,
    param_shapes,
    save_params,
    semantic_embed,
    similarity,
    topk_correspondences,
)
from helpers import random_rigid

DATA_DIR = Path(__file__).parent / "data"
TOY = NetConfig.toy()


def _random_objects(rng, n, classes=7):
    return ObjectSet(rng.uniform(-20.0, 20.0, (n, 3)),
                     rng.integers(0, classes, n).astype(np.uint8))


# ----------------------------- configuration --------------------------------


def test_config_validation():
    with pytest.raises(ValueError, match="divide"):
        NetConfig(num_heads=3)
    with pytest.raises(ValueError, match="d_model"):
        NetConfig(post_mlp=(64, 64))
    with pytest.raises(ValueError, match="d_geo"):
        NetConfig(d_geo=5)
    with pytest.raises(ValueError, match="sigma"):
        NetConfig(sigma_d=0.0)
    with pytest.raises(ValueError, match=">= 1"):
        NetConfig(edge_k=0)
    assert NetConfig().d_sem == 128
    assert TOY.d_model == 8 and TOY.num_blocks == 1


def test_param_shapes_structure():
    shapes = param_shapes(TOY)
    assert shapes["embed/table"] == (7, 4)
    assert shapes["sem/0/w"] == (4, 8)
    # Edge blocks consume (x_i, x_j - x_i) pairs: fan-in doubles.
    assert shapes["edge/0/0/w"] == (2 * (3 + 8), 8)
    assert shapes["edge/1/0/w"] == (2 * 8, 8)
    # The fusion stage sees all three edge outputs concatenated.
    assert shapes["post/0/w"] == (3 * 8, 8)
    for proj in ("q", "v", "out"):
        assert shapes[f"att/0/self/{proj}/w"] == (8, 8)
        assert shapes[f"att/0/self/{proj}/b"] == (8,)
    # Key and geometric projections are weight-only: their biases would add a
    # per-query constant across the key axis, invisible to softmax.
    assert "att/0/self/k/b" not in shapes
    assert "att/0/self/geo/b" not in shapes
    assert "att/0/cross/k/b" not in shapes
    assert shapes["att/0/self/geo/w"] == (2 * TOY.d_geo, 8)
    assert all(name.count("geo") == 0 for name in shapes if "cross" in name)


def test_init_params_deterministic_and_bounded():
    a = init_params(TOY, seed=0)
    b = init_params(TOY, seed=0)
    c = init_params(TOY, seed=1)
    for name in a.tensors:
        np.testing.assert_array_equal(a.tensors[name].data, b.tensors[name].data)
        assert a.tensors[name].requires_grad
    assert any(
        not np.array_equal(a.tensors[n].data, c.tensors[n].data) for n in a.tensors
    )
    for name, t in a.tensors.items():
        if name.endswith("/b"):
            np.testing.assert_array_equal(t.data, np.zeros_like(t.data))
        elif name.endswith("/w"):
            fan_in, fan_out = t.data.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.abs(t.data).max() <= limit


# ----------------------------- semantic + edge conv -------------------------


def test_semantic_embed_rows_follow_classes():
    params = init_params(TOY, seed=1)
    out = semantic_embed(np.array([2, 5, 2]), params)
    assert out.data.shape == (3, TOY.d_sem)
    np.testing.assert_array_equal(out.data[0], out.data[2])
    assert not np.array_equal(out.data[0], out.data[1])
    with pytest.raises(UnknownClassError, match="7"):
        semantic_embed(np.array([0, 7]), params)
    with pytest.raises(UnknownClassError, match="-1"):
        semantic_embed(np.array([-1]), params)


def test_knn_indices_exclude_self_and_keep_stable_ties():
    feats = np.array([[0.0], [1.0], [2.1], [3.0]])
    np.testing.assert_array_equal(
        _knn_indices(feats, 2), [[1, 2], [0, 2], [3, 1], [2, 1]]
    )
    tie = np.array([[0.0], [1.0], [2.0]])
    np.testing.assert_array_equal(_knn_indices(tie, 2), [[1, 2], [0, 2], [1, 0]])
    np.testing.assert_array_equal(_knn_indices(np.zeros((1, 4)), 5), [[0]])
    # k clamps to n - 1.
    assert _knn_indices(tie, 99).shape == (3, 2)


def edgeconv_oracle(x, k, tensors, prefix, n_sub):
    """Loop re-implementation of one edge convolution."""
    n = x.shape[0]
    k_eff = min(k, n - 1) if n > 1 else 1
    idx = _knn_indices(x, k)
    width = tensors[f"{prefix}/{n_sub - 1}/w"].data.shape[1]
    out = np.empty((n, width))
    for i in range(n):
        rows = []
        for j in idx[i]:
            e = np.concatenate([x[i], x[j] - x[i]])
            for s in range(n_sub):
                e = np.maximum(
                    e @ tensors[f"{prefix}/{s}/w"].data
                    + tensors[f"{prefix}/{s}/b"].data,
                    0.0,
                )
            rows.append(e)
        out[i] = np.max(rows, axis=0)
    return out


def test_edgeconv_matches_loop_oracle():
    rng = np.random.default_rng(50)
    params = init_params(TOY, seed=2)
    for n in (1, 2, 5, 12):
        x = rng.standard_normal((n, 2 * (3 + 8) // 2))  # fan-in/2 = 11
        got = edgeconv_layer(Tensor(x), TOY.edge_k, params.tensors, "edge/0", 2)
        want = edgeconv_oracle(x, TOY.edge_k, params.tensors, "edge/0", 2)
        np.testing.assert_allclose(got.data, want, atol=1e-12)


def test_enhance_shapes_and_empty_error():
    rng = np.random.default_rng(51)
    params = init_params(TOY, seed=3)
    objs = _random_objects(rng, 6)
    feats = enhance(objs, params)
    assert feats.data.shape == (6, TOY.d_model)
    empty = ObjectSet(np.empty((0, 3)), np.empty(0, dtype=np.uint8))
    with pytest.raises(EmptyObjectSetError):
        enhance(empty, params)


# ----------------------------- structure embedding ---------------------------


def test_sinusoid_layout():
    out = _sinusoid(np.array([0.0, 1.0]), 8)
    assert out.shape == (2, 8)
    np.testing.assert_array_equal(out[0, 0::2], np.zeros(4))  # sin 0
    np.testing.assert_array_equal(out[0, 1::2], np.ones(4))   # cos 0
    freqs = np.exp(-np.log(10000.0) * (2.0 * np.arange(4) / 8))
    np.testing.assert_allclose(out[1, 0::2], np.sin(freqs), atol=1e-15)
    np.testing.assert_allclose(out[1, 1::2], np.cos(freqs), atol=1e-15)


def geo_oracle(pts, cfg):
    """Loop re-implementation of the pairwise structure embedding."""
    n = pts.shape[0]
    d_geo = cfg.d_geo
    out = np.zeros((n, n, 2 * d_geo))
    dists = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    order = np.argsort(dists, axis=1, kind="stable")
    m = min(cfg.angle_k + 1, n - 1)
    scale = np.radians(cfg.sigma_a_deg)
    for i in range(n):
        for j in range(n):
            out[i, j, :d_geo] = _sinusoid(np.array(dists[i, j] / cfg.sigma_d), d_geo)
            if m <= 0 or dists[i, j] <= 1e-12:
                continue
            picked = [x for x in order[i, 1 : m + 1] if x != i and x != j]
            picked = picked[: cfg.angle_k]
            if not picked:
                continue
            u = pts[j] - pts[i]
            embs = []
            for x in picked:
                v = pts[x] - pts[i]
                ang = np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v))
                embs.append(_sinusoid(np.array(ang / scale), d_geo))
            out[i, j, d_geo:] = np.max(embs, axis=0)
    return out


def test_structure_embedding_matches_loop_oracle():
    rng = np.random.default_rng(52)
    for n in (1, 2, 3, 4, 7, 15):
        pts = rng.uniform(-10.0, 10.0, (n, 3))
        got = geometric_structure_embedding(pts, TOY)
        np.testing.assert_allclose(got, geo_oracle(pts, TOY), atol=1e-12)
    # Coincident points exercise the zero-baseline convention.
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                    [0.0, 2.0, 0.0]])
    got = geometric_structure_embedding(pts, TOY)
    np.testing.assert_allclose(got, geo_oracle(pts, TOY), atol=1e-12)
    np.testing.assert_array_equal(got[0, 1, TOY.d_geo:], np.zeros(TOY.d_geo))


def test_structure_embedding_small_sets():
    cfg = TOY
    one = geometric_structure_embedding(np.zeros((1, 3)), cfg)
    assert one.shape == (1, 1, 2 * cfg.d_geo)
    np.testing.assert_array_equal(one[0, 0, cfg.d_geo:], np.zeros(cfg.d_geo))
    # With two points, the only candidate neighbour of i is j itself, so the
    # angle pool is empty everywhere.
    two = geometric_structure_embedding(
        np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]), cfg
    )
    np.testing.assert_array_equal(two[:, :, cfg.d_geo:], np.zeros((2, 2, cfg.d_geo)))
    assert not np.array_equal(two[0, 1, :cfg.d_geo], two[0, 0, :cfg.d_geo])


def test_structure_embedding_rigid_invariance():
    rng = np.random.default_rng(53)
    pts = rng.uniform(-30.0, 30.0, (20, 3))
    base = geometric_structure_embedding(pts, TOY)
    for _ in range(10):
        t = random_rigid(rng, t_scale=50.0)
        moved = geometric_structure_embedding(apply_transform(t, pts), TOY)
        assert np.abs(moved - base).max() < 1e-9


def test_structure_embedding_permutation_consistency():
    rng = np.random.default_rng(54)
    pts = rng.uniform(-10.0, 10.0, (9, 3))
    perm = rng.permutation(9)
    base = geometric_structure_embedding(pts, TOY)
    shuffled = geometric_structure_embedding(pts[perm], TOY)
    np.testing.assert_allclose(shuffled, base[np.ix_(perm, perm)], atol=1e-12)


# ----------------------------- attention stack ------------------------------


def test_attention_swap_symmetry_is_exact():
    rng = np.random.default_rng(55)
    params = init_params(TOY, seed=4)
    objs_a = _random_objects(rng, 8)
    objs_b = _random_objects(rng, 6)
    fa = enhance(objs_a, params)
    fb = enhance(objs_b, params)
    ga = geometric_structure_embedding(objs_a.centroids, TOY)
    gb = geometric_structure_embedding(objs_b.centroids, TOY)
    out_ab = attention_stack(fa, fb, ga, gb, params)
    out_ba = attention_stack(fb, fa, gb, ga, params)
    np.testing.assert_array_equal(out_ab[0].data, out_ba[1].data)
    np.testing.assert_array_equal(out_ab[1].data, out_ba[0].data)


def test_attention_stack_validates_shapes():
    rng = np.random.default_rng(56)
    params = init_params(TOY, seed=5)
    f = Tensor(rng.standard_normal((4, TOY.d_model)))
    geo = geometric_structure_embedding(rng.standard_normal((4, 3)), TOY)
    bad_f = Tensor(rng.standard_normal((4, TOY.d_model + 1)))
    with pytest.raises(DimensionMismatchError, match="features"):
        attention_stack(bad_f, f, geo, geo, params)
    with pytest.raises(DimensionMismatchError, match="structure"):
        attention_stack(f, f, geo[:3, :3], geo, params)


def test_hybrid_features_regression_fixture():
    fix = np.load(DATA_DIR / "attention_golden.npz")
    params = init_params(TOY, seed=7)
    objs_s = ObjectSet(fix["centroids_s"], fix["classes_s"])
    objs_m = ObjectSet(fix["centroids_m"], fix["classes_m"])
    with ad.no_grad():
        h_s, h_m = hybrid_features(objs_s, objs_m, params)
        sim = similarity(h_s, h_m)
    np.testing.assert_allclose(h_s.data, fix["features_s"], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(h_m.data, fix["features_m"], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(sim, fix["similarity"], rtol=1e-9, atol=1e-12)


# ----------------------------- matching head --------------------------------


def test_similarity_matches_loop_arithmetic():
    rng = np.random.default_rng(57)
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((3, 4))
    got = similarity(a, b, normalize=False)
    s = np.empty((5, 3))
    for i in range(5):
        for j in range(3):
            s[i, j] = np.exp(-((a[i] - b[j]) ** 2).sum())
    want = np.empty_like(s)
    for i in range(5):
        for j in range(3):
            want[i, j] = (s[i, j] / s[i].sum()) * (s[i, j] / s[:, j].sum())
    np.testing.assert_allclose(got, want, atol=1e-14)
    assert got.min() >= 0.0 and got.max() <= 1.0


def test_similarity_normalization_flag():
    rng = np.random.default_rng(58)
    a = rng.standard_normal((4, 6)) * 3.0
    b = rng.standard_normal((4, 6)) * 3.0
    plain = similarity(a, b, normalize=False)
    unit = similarity(a, b, normalize=True)
    assert not np.allclose(plain, unit)
    norm_a = a / np.linalg.norm(a, axis=1, keepdims=True)
    norm_b = b / np.linalg.norm(b, axis=1, keepdims=True)
    np.testing.assert_allclose(unit, similarity(norm_a, norm_b, normalize=False),
                               atol=1e-14)
    with pytest.raises(DimensionMismatchError):
        similarity(a, rng.standard_normal((4, 5)))


def test_similarity_identical_rows_peak():
    rng = np.random.default_rng(59)
    a = rng.standard_normal((6, 8))
    sim = similarity(a, a)
    assert (sim.argmax(axis=1) == np.arange(6)).all()


def test_mask_semantic():
    rng = np.random.default_rng(60)
    s = rng.random((3, 4)) + 0.1
    cs = np.array([0, 1, 2])
    cm = np.array([1, 0, 1, 2])
    masked = mask_semantic(s, cs, cm)
    same = cs[:, None] == cm[None, :]
    np.testing.assert_array_equal(masked[~same], 0.0)
    np.testing.assert_array_equal(masked[same], s[same])
    with pytest.raises(DimensionMismatchError):
        mask_semantic(s, cs, np.array([1, 2]))


def test_topk_ordering_and_ties():
    s = np.array([[0.5, 0.5], [0.5, 0.0]])
    corr = topk_correspondences(s, 2)
    np.testing.assert_array_equal(corr.pairs, [[0, 0], [0, 1]])
    np.testing.assert_array_equal(corr.weights, [0.5, 0.5])
    # Requesting more than the nonzero count returns them all, descending.
    s = np.array([[0.1, 0.9], [0.0, 0.4]])
    corr = topk_correspondences(s, 10)
    np.testing.assert_array_equal(corr.pairs, [[0, 1], [1, 1], [0, 0]])
    assert (np.diff(corr.weights) <= 0).all()
    with pytest.raises(NoCorrespondencesError):
        topk_correspondences(np.zeros((2, 2)), 3)
    with pytest.raises(ValueError, match="n_c"):
        topk_correspondences(s, 0)


def test_forward_single_object_pair():
    params = init_params(TOY, seed=6)
    one = ObjectSet(np.array([[1.0, 2.0, 3.0]]), np.array([4]))
    other = ObjectSet(np.array([[5.0, 1.0, 0.0]]), np.array([4]))
    result = forward(one, other, params, n_c=5)
    np.testing.assert_array_equal(result.correspondences.pairs, [[0, 0]])
    assert result.similarity.shape == (1, 1)
    assert result.correspondences.weights[0] == pytest.approx(1.0)


def test_forward_class_disjoint_raises():
    rng = np.random.default_rng(61)
    params = init_params(TOY, seed=6)
    a = ObjectSet(rng.uniform(-5, 5, (4, 3)), np.zeros(4, dtype=np.uint8))
    b = ObjectSet(rng.uniform(-5, 5, (4, 3)), np.ones(4, dtype=np.uint8))
    with pytest.raises(NoCorrespondencesError):
        forward(a, b, params)


def test_forward_respects_class_gate():
    rng = np.random.default_rng(62)
    params = init_params(TOY, seed=8)
    objs_s = _random_objects(rng, 15, classes=3)
    objs_m = _random_objects(rng, 12, classes=3)
    result = forward(objs_s, objs_m, params, n_c=40)
    for i, j in result.correspondences.pairs:
        assert objs_s.classes[i] == objs_m.classes[j]


# ----------------------------- checkpoints ----------------------------------


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(TOY, seed=9)
    path = tmp_path / "net.colp"
    save_params(path, params)
    loaded = load_params(path)
    assert loaded.config == TOY
    for name, t in params.tensors.items():
        np.testing.assert_array_equal(
            loaded.tensors[name].data,
            t.data.astype(np.float32).astype(np.float64),
        )
        assert loaded.tensors[name].requires_grad
    # Once quantized, a save/load/save cycle is bit-identical.
    second = encode_params(loaded)
    assert encode_params(decode_params(second)) == second


def test_checkpoint_preserves_nondefault_config(tmp_path):
    cfg = NetConfig(sem_mlp=(16, 24), edge_mlps=((8, 8), (8, 8), (16, 24)),
                    post_mlp=(32, 24), d_model=24, num_heads=2, d_geo=4,
                    num_blocks=2, sigma_d=2.5, normalize_features=False)
    params = init_params(cfg, seed=10)
    path = tmp_path / "net.colp"
    save_params(path, params)
    assert load_params(path).config == cfg


def test_checkpoint_error_taxonomy():
    params = init_params(TOY, seed=11)
    good = encode_params(params)
    with pytest.raises(CheckpointError, match="magic"):
        decode_params(b"XXXX" + good[4:])
    with pytest.raises(CheckpointError, match="version"):
        decode_params(good[:4] + bytes([9]) + good[5:])
    with pytest.raises(CheckpointError, match="truncated"):
        decode_params(good[:-3])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_params(good + b"\x00\x00")
    # A checkpoint whose tensors do not fit its own config is rejected.
    other = encode_params(init_params(NetConfig.toy(), seed=11))
    mangled = bytearray(good)
    wrong_cfg = encode_params(
        init_params(
            NetConfig(sem_mlp=(16, 8), edge_mlps=TOY.edge_mlps, edge_k=8,
                      post_mlp=(8, 8), num_blocks=1, num_heads=4, d_model=8,
                      ffn_dim=16, d_geo=8),
            seed=11,
        )
    )
    header_end = 9 + int.from_bytes(good[5:9], "little")
    hybrid = wrong_cfg[: 9 + int.from_bytes(wrong_cfg[5:9], "little")] \
        + bytes(mangled[header_end:])
    with pytest.raises(CheckpointError, match="does not fit"):
        decode_params(hybrid)
    assert other == good  # same config + seed -> identical bytes
