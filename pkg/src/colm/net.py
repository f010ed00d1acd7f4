"""Object matching network.

Pipeline per object set: class embedding + MLP, three dynamic-graph edge
convolutions over k feature-space neighbours, a fusion MLP, then interleaved
geometric self-attention (scores conditioned on a rigid-invariant pairwise
structure embedding) and feature cross-attention between the two sets. The
resulting hybrid features feed a dual-normalized Gaussian similarity, a
semantic mask and a global top-k correspondence selection.

No normalization layers and no dropout anywhere, by design.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from . import autodiff as ad
from .autodiff import Tensor
from .core import ColmError, CorrespondenceSet, ObjectSet

CHECKPOINT_MAGIC = b"COLP"
CHECKPOINT_VERSION = 1


class NetError(ColmError):
    pass


class UnknownClassError(NetError):
    pass


class EmptyObjectSetError(NetError):
    pass


class DimensionMismatchError(NetError):
    pass


class NoCorrespondencesError(NetError):
    pass


class CheckpointError(NetError):
    pass


# ----------------------------- configuration --------------------------------


@dataclass(frozen=True)
class NetConfig:
    num_classes: int = 7
    d_emb: int = 4
    sem_mlp: tuple[int, ...] = (32, 64, 128)
    edge_mlps: tuple[tuple[int, ...], ...] = ((64, 64), (64, 64), (64, 64))
    edge_k: int = 30
    post_mlp: tuple[int, ...] = (1024, 512, 256, 256)
    num_blocks: int = 3
    num_heads: int = 4
    d_model: int = 256
    ffn_dim: int = 512
    d_geo: int = 32
    sigma_d: float = 4.8
    sigma_a_deg: float = 15.0
    angle_k: int = 3
    normalize_features: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "sem_mlp", tuple(int(w) for w in self.sem_mlp))
        object.__setattr__(
            self, "edge_mlps", tuple(tuple(int(w) for w in ws) for ws in self.edge_mlps)
        )
        object.__setattr__(self, "post_mlp", tuple(int(w) for w in self.post_mlp))
        widths = (
            (self.num_classes, self.d_emb, self.edge_k, self.num_blocks,
             self.num_heads, self.d_model, self.ffn_dim, self.angle_k)
            + self.sem_mlp + self.post_mlp + tuple(w for ws in self.edge_mlps for w in ws)
        )
        if any(w < 1 for w in widths):
            raise ValueError("all widths and counts must be >= 1")
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"num_heads={self.num_heads} must divide d_model={self.d_model}"
            )
        if self.post_mlp[-1] != self.d_model:
            raise ValueError(
                f"fusion MLP must end at d_model={self.d_model}, got {self.post_mlp[-1]}"
            )
        if self.d_geo < 2 or self.d_geo % 2 != 0:
            raise ValueError(f"d_geo must be even and >= 2, got {self.d_geo}")
        if self.sigma_d <= 0 or self.sigma_a_deg <= 0:
            raise ValueError("sigma_d and sigma_a_deg must be positive")

    @classmethod
    def toy(cls) -> "NetConfig":
        """Width-8 variant for tests and gradient checks."""
        return cls(
            d_emb=4,
            sem_mlp=(8, 8),
            edge_mlps=((8, 8), (8, 8), (8, 8)),
            edge_k=8,
            post_mlp=(8, 8),
            num_blocks=1,
            num_heads=4,
            d_model=8,
            ffn_dim=16,
            d_geo=8,
        )

    @property
    def d_sem(self) -> int:
        return self.sem_mlp[-1]


@dataclass
class MatchParams:
    """Named parameter tensors plus the configuration they were built for."""

    config: NetConfig
    tensors: dict[str, Tensor]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter tensor's name and shape, in canonical creation order."""
    shapes: dict[str, tuple[int, ...]] = {}

    def linear(name: str, fan_in: int, fan_out: int) -> None:
        shapes[f"{name}/w"] = (fan_in, fan_out)
        shapes[f"{name}/b"] = (fan_out,)

    shapes["embed/table"] = (cfg.num_classes, cfg.d_emb)
    dims = (cfg.d_emb, *cfg.sem_mlp)
    for i in range(len(cfg.sem_mlp)):
        linear(f"sem/{i}", dims[i], dims[i + 1])
    in_dim = 3 + cfg.d_sem
    for li, widths in enumerate(cfg.edge_mlps):
        sub_in = 2 * in_dim
        for si, width in enumerate(widths):
            linear(f"edge/{li}/{si}", sub_in, width)
            sub_in = width
        in_dim = widths[-1]
    fused = sum(ws[-1] for ws in cfg.edge_mlps)
    dims = (fused, *cfg.post_mlp)
    for i in range(len(cfg.post_mlp)):
        linear(f"post/{i}", dims[i], dims[i + 1])
    d = cfg.d_model
    # The key and geometric projections carry no bias: a per-query constant
    # over the key axis is invisible to softmax, so such biases would be
    # inert parameters.
    for b in range(cfg.num_blocks):
        for proj in ("q", "v", "out"):
            linear(f"att/{b}/self/{proj}", d, d)
        shapes[f"att/{b}/self/k/w"] = (d, d)
        shapes[f"att/{b}/self/geo/w"] = (2 * cfg.d_geo, d)
        linear(f"att/{b}/self/ffn/0", d, cfg.ffn_dim)
        linear(f"att/{b}/self/ffn/1", cfg.ffn_dim, d)
        for proj in ("q", "v", "out"):
            linear(f"att/{b}/cross/{proj}", d, d)
        shapes[f"att/{b}/cross/k/w"] = (d, d)
        linear(f"att/{b}/cross/ffn/0", d, cfg.ffn_dim)
        linear(f"att/{b}/cross/ffn/1", cfg.ffn_dim, d)
    return shapes


def init_params(cfg: NetConfig, seed: int) -> MatchParams:
    """Deterministic initialization: Glorot-uniform weights, zero biases,
    unit-normal embedding table."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        if name == "embed/table":
            data = rng.standard_normal(shape)
        elif name.endswith("/w"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return MatchParams(cfg, tensors)


# ----------------------------- feature extraction ---------------------------


def _mlp(params: dict[str, Tensor], prefix: str, x: Tensor, n_layers: int,
         relu_last: bool = False) -> Tensor:
    for i in range(n_layers):
        x = ad.add(ad.matmul(x, params[f"{prefix}/{i}/w"]), params[f"{prefix}/{i}/b"])
        if relu_last or i < n_layers - 1:
            x = ad.relu(x)
    return x


def semantic_embed(labels, params: MatchParams) -> Tensor:
    """Per-object semantic feature rows: MLP over the class embedding table."""
    ids = np.asarray(labels, dtype=np.int64).reshape(-1)
    table = params.tensors["embed/table"]
    n_classes = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_classes):
        bad = ids[(ids < 0) | (ids >= n_classes)][0]
        raise UnknownClassError(f"class id {bad} outside the {n_classes}-class table")
    x = ad.take_rows(table, ids)
    return _mlp(params.tensors, "sem", x, len(params.config.sem_mlp))


def _knn_indices(feats: NDArray[np.float64], k: int) -> NDArray[np.int64]:
    """k nearest neighbours per row in feature space, self excluded.

    k is clamped to n - 1; a single row pairs with itself.
    """
    n = feats.shape[0]
    if n == 1:
        return np.zeros((1, 1), dtype=np.int64)
    k_eff = min(k, n - 1)
    sq = (feats * feats).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (feats @ feats.T)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k_eff]


def edgeconv_layer(x: Tensor, k: int, params: dict[str, Tensor], prefix: str,
                   n_sub: int) -> Tensor:
    """Dynamic-graph edge convolution: max over neighbours j of
    h_ec(x_i (concat) x_j - x_i), neighbours recomputed in the feature space
    of x."""
    n, d = x.data.shape
    idx = _knn_indices(x.data, k)
    k_eff = idx.shape[1]
    xj = ad.take_rows(x, idx)  # (n, k_eff, d)
    xi = ad.reshape(x, (n, 1, d))
    edge = ad.concat([ad.broadcast_to(xi, (n, k_eff, d)), ad.sub(xj, xi)], axis=2)
    edge = _mlp(params, prefix, edge, n_sub, relu_last=True)
    return ad.max_(edge, axis=1)


def enhance(objects: ObjectSet, params: MatchParams) -> Tensor:
    """Per-object features: centroid + semantic rows through the edge-conv
    stack, all layer outputs concatenated, then the fusion MLP."""
    if len(objects) == 0:
        raise EmptyObjectSetError("cannot extract features from an empty object set")
    cfg = params.config
    sem = semantic_embed(objects.classes, params)
    x = ad.concat([Tensor(objects.centroids), sem], axis=1)
    outputs: list[Tensor] = []
    for li, widths in enumerate(cfg.edge_mlps):
        x = edgeconv_layer(x, cfg.edge_k, params.tensors, f"edge/{li}", len(widths))
        outputs.append(x)
    fused = ad.concat(outputs, axis=1)
    return _mlp(params.tensors, "post", fused, len(cfg.post_mlp))


# ----------------------------- geometric embedding --------------------------


def _sinusoid(vals: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * (2.0 * np.arange(half) / dim))
    ang = vals[..., None] * freqs
    out = np.empty(vals.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def geometric_structure_embedding(centroids, cfg: NetConfig) -> NDArray[np.float64]:
    """Rigid-invariant pairwise tensor (n, n, 2 d_geo).

    Entry (i, j) concatenates a sinusoidal embedding of the distance
    ||o_i - o_j|| at scale sigma_d with the elementwise max of sinusoidal
    embeddings of the angles between (o_j - o_i) and (o_x - o_i), pooled over
    the angle_k nearest neighbours x of i (excluding i and j). Zero-baseline
    pairs get an all-zero angle part.
    """
    pts = np.asarray(centroids, dtype=np.float64)
    n = pts.shape[0]
    d_geo = cfg.d_geo
    diffs = pts[:, None, :] - pts[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))
    out = np.empty((n, n, 2 * d_geo))
    out[:, :, :d_geo] = _sinusoid(dists / cfg.sigma_d, d_geo)

    m = min(cfg.angle_k + 1, n - 1)
    if m <= 0:
        out[:, :, d_geo:] = 0.0
        return out

    angle_scale = np.radians(cfg.sigma_a_deg)
    order = np.argsort(dists, axis=1, kind="stable")
    cand = order[:, 1 : m + 1]  # (n, m) nearest others per row
    col = np.arange(n)
    block = max(1, 8_000_000 // (n * m * d_geo))
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        rows = slice(lo, hi)
        u = -diffs[rows]  # (B, n, 3): o_j - o_i
        v = pts[cand[rows]] - pts[rows, None, :]  # (B, m, 3): o_x - o_i
        cross = np.cross(u[:, :, None, :], v[:, None, :, :])
        dot = (u[:, :, None, :] * v[:, None, :, :]).sum(axis=3)
        ang = np.arctan2(np.sqrt((cross**2).sum(axis=3)), dot)  # (B, n, m)

        valid = (cand[rows][:, None, :] != col[None, :, None]) & (
            cand[rows][:, None, :] != col[rows.start : rows.stop, None, None]
        )
        valid &= np.cumsum(valid, axis=2) <= cfg.angle_k
        emb = _sinusoid(ang / angle_scale, d_geo)
        pooled = np.maximum.reduce(emb, axis=2, where=valid[..., None],
                                   initial=-np.inf)
        usable = valid.any(axis=2) & (dists[rows] > 1e-12)
        out[rows, :, d_geo:] = np.where(usable[..., None], pooled, 0.0)
    return out


# ----------------------------- attention stack ------------------------------


def _attention(params: dict[str, Tensor], prefix: str, x_q: Tensor, x_kv: Tensor,
               geo: NDArray[np.float64] | None, cfg: NetConfig) -> Tensor:
    heads = cfg.num_heads
    dh = cfg.d_model // heads
    n_q = x_q.data.shape[0]
    n_kv = x_kv.data.shape[0]

    def lin(name: str, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, params[f"{prefix}/{name}/w"]),
                      params[f"{prefix}/{name}/b"])

    q = ad.transpose(ad.reshape(lin("q", x_q), (n_q, heads, dh)), (1, 0, 2))
    k = ad.matmul(x_kv, params[f"{prefix}/k/w"])
    k = ad.transpose(ad.reshape(k, (n_kv, heads, dh)), (1, 2, 0))
    v = ad.transpose(ad.reshape(lin("v", x_kv), (n_kv, heads, dh)), (1, 0, 2))
    scores = ad.matmul(q, k)  # (heads, n_q, n_kv)

    if geo is not None:
        # q . (geo W_g) contracted as (q W_g^T) . geo, which never
        # materializes the projected (n, n, d_model) tensor. geo arrives
        # pre-transposed as (n_q, d_g, n_q).
        wg = params[f"{prefix}/geo/w"]
        d_g = wg.data.shape[0]
        wg_h = ad.transpose(ad.reshape(wg, (d_g, heads, dh)), (1, 2, 0))  # (h, dh, d_g)
        proj = ad.matmul(q, wg_h)  # (heads, n_q, d_g)
        term = ad.matmul(ad.transpose(proj, (1, 0, 2)), Tensor(geo))  # (n_q, h, n_q)
        scores = ad.add(scores, ad.transpose(term, (1, 0, 2)))

    attn = ad.softmax(ad.mul(scores, 1.0 / np.sqrt(dh)), axis=-1)
    ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (1, 0, 2)), (n_q, cfg.d_model))
    y = ad.add(x_q, lin("out", ctx))
    hidden = ad.relu(ad.add(ad.matmul(y, params[f"{prefix}/ffn/0/w"]),
                            params[f"{prefix}/ffn/0/b"]))
    ffn = ad.add(ad.matmul(hidden, params[f"{prefix}/ffn/1/w"]),
                 params[f"{prefix}/ffn/1/b"])
    return ad.add(y, ffn)


def attention_stack(feats_s: Tensor, feats_m: Tensor, geo_s, geo_m,
                    params: MatchParams, cfg: NetConfig | None = None
                    ) -> tuple[Tensor, Tensor]:
    """Interleave geometric self-attention and cross-attention num_blocks
    times. Weights are shared between the two sets and across the two cross
    directions, and both sets update simultaneously, so swapping the argument
    order swaps the outputs exactly."""
    cfg = cfg or params.config
    for name, feats in (("source", feats_s), ("target", feats_m)):
        if feats.data.ndim != 2 or feats.data.shape[1] != cfg.d_model:
            raise DimensionMismatchError(
                f"{name} features must be (n, {cfg.d_model}), got {feats.data.shape}"
            )
    for name, feats, geo in (("source", feats_s, geo_s), ("target", feats_m, geo_m)):
        n = feats.data.shape[0]
        if np.shape(geo) != (n, n, 2 * cfg.d_geo):
            raise DimensionMismatchError(
                f"{name} structure embedding must be {(n, n, 2 * cfg.d_geo)}, "
                f"got {np.shape(geo)}"
            )
    p = params.tensors
    geo_s_t = np.ascontiguousarray(np.swapaxes(np.asarray(geo_s, dtype=np.float64), 1, 2))
    geo_m_t = np.ascontiguousarray(np.swapaxes(np.asarray(geo_m, dtype=np.float64), 1, 2))
    for b in range(cfg.num_blocks):
        feats_s = _attention(p, f"att/{b}/self", feats_s, feats_s, geo_s_t, cfg)
        feats_m = _attention(p, f"att/{b}/self", feats_m, feats_m, geo_m_t, cfg)
        cross_s = _attention(p, f"att/{b}/cross", feats_s, feats_m, None, cfg)
        cross_m = _attention(p, f"att/{b}/cross", feats_m, feats_s, None, cfg)
        feats_s, feats_m = cross_s, cross_m
    return feats_s, feats_m


def hybrid_features(objs_s: ObjectSet, objs_m: ObjectSet,
                    params: MatchParams) -> tuple[Tensor, Tensor]:
    """Full feature path for a pair of object sets (differentiable)."""
    cfg = params.config
    feats_s = enhance(objs_s, params)
    feats_m = enhance(objs_m, params)
    geo_s = geometric_structure_embedding(objs_s.centroids, cfg)
    geo_m = geometric_structure_embedding(objs_m.centroids, cfg)
    return attention_stack(feats_s, feats_m, geo_s, geo_m, params, cfg)


# ----------------------------- matching head --------------------------------


def similarity(h_s, h_m, normalize: bool = True) -> NDArray[np.float64]:
    """Dual-normalized Gaussian similarity on (optionally unit-norm) rows.

    s_ij = exp(-||h_i - h_j||^2), then s_ij / row_sum * s_ij / col_sum;
    every entry lands in [0, 1].
    """
    a = h_s.data if isinstance(h_s, Tensor) else np.asarray(h_s, dtype=np.float64)
    b = h_m.data if isinstance(h_m, Tensor) else np.asarray(h_m, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if normalize:
        a = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
        b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    s = np.exp(-d2)
    return (s / s.sum(axis=1, keepdims=True)) * (s / s.sum(axis=0, keepdims=True))


def mask_semantic(s: NDArray[np.float64], classes_s, classes_m) -> NDArray[np.float64]:
    """Zero every entry whose objects carry different classes."""
    cs = np.asarray(classes_s).reshape(-1)
    cm = np.asarray(classes_m).reshape(-1)
    if s.shape != (cs.size, cm.size):
        raise DimensionMismatchError(
            f"similarity shape {s.shape} does not match class counts "
            f"({cs.size}, {cm.size})"
        )
    return np.where(cs[:, None] == cm[None, :], s, 0.0)


def topk_correspondences(s: NDArray[np.float64], n_c: int) -> CorrespondenceSet:
    """The n_c highest-scoring cells over the whole matrix, zeros excluded;
    ties broken by (i, j) ascending."""
    if n_c < 1:
        raise ValueError(f"n_c must be >= 1, got {n_c}")
    ii, jj = np.nonzero(s > 0.0)
    if ii.size == 0:
        raise NoCorrespondencesError("similarity matrix has no nonzero entries")
    scores = s[ii, jj]
    order = np.lexsort((jj, ii, -scores))[: min(n_c, ii.size)]
    pairs = np.stack([ii[order], jj[order]], axis=1)
    return CorrespondenceSet(pairs, scores[order])


@dataclass(frozen=True)
class MatchResult:
    features_source: NDArray[np.float64]
    features_target: NDArray[np.float64]
    similarity: NDArray[np.float64]
    correspondences: CorrespondenceSet


def forward(objs_s: ObjectSet, objs_m: ObjectSet, params: MatchParams,
            n_c: int = 15) -> MatchResult:
    """Run the full matching pipeline and select top-n_c correspondences."""
    with ad.no_grad():
        h_s, h_m = hybrid_features(objs_s, objs_m, params)
        sim = similarity(h_s, h_m, normalize=params.config.normalize_features)
        masked = mask_semantic(sim, objs_s.classes, objs_m.classes)
        corr = topk_correspondences(masked, n_c)
    return MatchResult(h_s.data, h_m.data, masked, corr)


# ----------------------------- checkpoints ----------------------------------


def _config_to_dict(cfg: NetConfig) -> dict:
    raw = asdict(cfg)
    raw["sem_mlp"] = list(cfg.sem_mlp)
    raw["edge_mlps"] = [list(ws) for ws in cfg.edge_mlps]
    raw["post_mlp"] = list(cfg.post_mlp)
    return raw


def _config_from_dict(raw: dict) -> NetConfig:
    raw = dict(raw)
    raw["sem_mlp"] = tuple(raw["sem_mlp"])
    raw["edge_mlps"] = tuple(tuple(ws) for ws in raw["edge_mlps"])
    raw["post_mlp"] = tuple(raw["post_mlp"])
    return NetConfig(**raw)


def encode_params(params: MatchParams) -> bytes:
    """Versioned binary checkpoint: header with the JSON config, then named
    float32 tensors. Saving quantizes float64 state to float32; a saved file
    reloads and re-saves bit-exactly."""
    config_json = json.dumps(_config_to_dict(params.config), sort_keys=True).encode()
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<B", CHECKPOINT_VERSION),
        struct.pack("<I", len(config_json)),
        config_json,
        struct.pack("<I", len(params.tensors)),
    ]
    for name, tensor in params.tensors.items():
        encoded = name.encode()
        shape = tensor.data.shape
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", len(shape)))
        chunks.append(struct.pack(f"<{len(shape)}I", *shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_params(data: bytes) -> MatchParams:
    view = memoryview(data)
    if len(view) < 9 or view[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {bytes(view[:4])!r}")
    version = view[4]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (config_len,) = struct.unpack_from("<I", view, 5)
    offset = 9
    try:
        config = _config_from_dict(json.loads(bytes(view[offset : offset + config_len])))
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint config: {exc}") from exc
    offset += config_len
    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4

    expected = param_shapes(config)
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset : offset + name_len]).decode()
        offset += name_len
        rank = view[offset]
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", view, offset)
        offset += 4 * rank
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        end = offset + 4 * size
        if end > len(view):
            raise CheckpointError(
                f"tensor {name!r} truncated: needs {end - offset} bytes, "
                f"{len(view) - offset} remain"
            )
        flat = np.frombuffer(view, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        if name not in expected or tuple(shape) != expected[name]:
            raise CheckpointError(
                f"tensor {name!r} with shape {tuple(shape)} does not fit the "
                "checkpoint config"
            )
        tensors[name] = Tensor(flat.astype(np.float64).reshape(shape),
                               requires_grad=True)
    if offset != len(view):
        raise CheckpointError(f"{len(view) - offset} trailing bytes after tensors")
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise CheckpointError(f"checkpoint missing tensors: {missing[:3]}...")
    return MatchParams(config, {name: tensors[name] for name in expected})


def save_params(path, params: MatchParams) -> int:
    data = encode_params(params)
    Path(path).write_bytes(data)
    return len(data)


def load_params(path) -> MatchParams:
    return decode_params(Path(path).read_bytes())
