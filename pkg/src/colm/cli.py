"""Command-line surface.

Subcommands:
  extract   label/scan binaries -> compact scan records (.cor)
  register  align two .cor files with the matching net + a pose solver
  eval      batch registration over a pair list, CSV outputs
  train     toy-scale training on synthetic pairs -> checkpoint + curves
  synth     generate a synthetic map/query benchmark directory
  pack      bundle .cor files (+ poses) into a .cormap map file
  report    storage statistics of a .cormap

Exit codes: 0 success, 2 input error, 3 no solution, 4 divergence.
COLM_LOG sets the log level (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, codec, ingest, net
from .core import ColmError, LabeledPointCloud, RigidTransform, invert
from .extract import ExtractConfig, extract_pipeline
from .loss import DivergenceError, LossConfig, TrainConfig, train_toy
from .net import NetConfig, forward, init_params, load_params, save_params
from .pose import (
    IcpConfig,
    PoseError,
    RansacConfig,
    ransac_register,
    rre,
    rte,
    svd_register,
    with_icp,
)
from .synth import PerturbConfig, SceneConfig, make_registration_pairs

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_SOLUTION = 3
EXIT_DIVERGED = 4

_NO_SOLUTION_ERRORS = (
    net.NoCorrespondencesError,
    net.EmptyObjectSetError,
    PoseError,
)


# ----------------------------- manifest -------------------------------------


def blob_sha1(data: bytes) -> str:
    """Git-style content hash of a byte string."""
    h = hashlib.sha1(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    params_hash: str | None = None
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(self.to_json())
        return path


# ----------------------------- shared helpers -------------------------------


def _load_or_init_params(path: str | None, net_name: str, seed: int) -> net.MatchParams:
    if path is not None:
        return load_params(path)
    cfg = NetConfig.toy() if net_name == "toy" else NetConfig()
    log.info("no checkpoint given; using %s params initialized with seed %d",
             net_name, seed)
    return init_params(cfg, seed)


def _register_pair(objs_s, objs_m, params, solver: str, n_c: int | None,
                   icp: bool, ransac_cfg: RansacConfig):
    if n_c is None:
        n_c = 15 if solver == "svd" else 60
    match = forward(objs_s, objs_m, params, n_c=n_c)
    if solver == "svd":
        result = svd_register(match.correspondences, objs_s, objs_m)
    else:
        result = ransac_register(match.correspondences, objs_s, objs_m, ransac_cfg)
    if icp:
        result = with_icp(result, objs_s, objs_m, IcpConfig())
    return result


def _read_gt_flat(path) -> RigidTransform:
    values = [float(v) for v in Path(path).read_text().split()]
    if len(values) != 12:
        raise ingest.IngestError(f"{path}: expected 12 values, got {len(values)}")
    return RigidTransform.from_flat(values)


def _read_pairs_csv(path) -> list[tuple[str, str, RigidTransform]]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip() == "src":
                continue
            if len(row) != 14:
                raise ingest.IngestError(
                    f"{path}: pair rows need src,dst + 12 transform values, "
                    f"got {len(row)} fields"
                )
            gt = RigidTransform.from_flat([float(v) for v in row[2:]])
            rows.append((row[0].strip(), row[1].strip(), gt))
    return rows


def _write_pairs_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"] + [f"g{i}" for i in range(12)])
        for src, dst, transform in rows:
            writer.writerow([src, dst] + [f"{v:.17g}" for v in transform.to_flat()])


# ----------------------------- extract --------------------------------------


def cmd_extract(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scans = [Path(p) for p in args.scans]
    if args.labels:
        if len(args.labels) != len(scans):
            raise ingest.IngestError(
                f"{len(args.labels)} label files for {len(scans)} scans"
            )
        labels = [Path(p) for p in args.labels]
    else:
        labels = [p.with_suffix(".label") for p in scans]
    class_map = ingest.read_class_map(args.classes) if args.classes else None

    cfg = ExtractConfig(eps=args.eps, min_pts=args.min_pts, max_points=args.max_points)
    outputs = []
    for scan_path, label_path in zip(scans, labels):
        points = ingest.read_point_bin(scan_path)
        raw = ingest.read_labels(label_path, points.shape[0])
        mapped = class_map.apply(raw) if class_map else raw
        cloud = LabeledPointCloud(points, mapped)
        objs = extract_pipeline(cloud, cfg, seed=args.seed)
        data = codec.encode_scan(objs)
        out_path = out_dir / (scan_path.stem + ".cor")
        out_path.write_bytes(data)
        outputs.append(str(out_path))
        if len(objs) == 0:
            log.warning("%s: no static objects found", scan_path)
        print(f"{scan_path} -> {out_path}: {len(objs)} objects, {len(data)} bytes")

    RunManifest(
        command="extract",
        config={**asdict(cfg), "static_classes": sorted(cfg.static_classes)},
        seeds={"seed": args.seed},
        inputs=[str(p) for p in scans + labels],
        outputs=outputs,
    ).write(out_dir)
    return EXIT_OK


# ----------------------------- register -------------------------------------


def cmd_register(args) -> int:
    objs_s = codec.read_scan(args.src)
    objs_m = codec.read_scan(args.dst)
    params = _load_or_init_params(args.params, args.net, args.seed)
    ransac_cfg = RansacConfig(iterations=args.ransac_iters,
                              tolerance=args.ransac_tol, seed=args.seed)
    start = time.perf_counter()
    result = _register_pair(objs_s, objs_m, params, args.solver, args.nc,
                            args.icp, ransac_cfg)
    wall_ms = (time.perf_counter() - start) * 1e3

    flat = result.transform.to_flat()
    print("transform: " + " ".join(f"{v:.9f}" for v in flat))
    print(f"solver: {result.solver}")
    print(f"inliers: {len(result.inliers.pairs)}")
    if args.gt:
        gt = _read_gt_flat(args.gt)
        err_t = rte(result.transform.translation, gt.translation)
        err_r = np.degrees(rre(result.transform.rotation, gt.rotation))
        print(f"rte_m: {err_t:.6f}")
        print(f"rre_deg: {err_r:.6f}")
    print(f"wall_ms: {wall_ms:.2f}")
    return EXIT_OK


# ----------------------------- eval -----------------------------------------

_WORKER_PARAMS: dict[tuple, net.MatchParams] = {}


def _eval_one(task) -> tuple[int, float, float, float, str]:
    (idx, src_path, dst_path, gt_flat, params_path, net_name, solver, n_c,
     icp, seed, ransac_iters, ransac_tol) = task
    key = (params_path, net_name, seed)
    params = _WORKER_PARAMS.get(key)
    if params is None:
        params = _load_or_init_params(params_path, net_name, seed)
        _WORKER_PARAMS[key] = params
    start = time.perf_counter()
    try:
        objs_s = codec.read_scan(src_path)
        objs_m = codec.read_scan(dst_path)
        cfg = RansacConfig(iterations=ransac_iters, tolerance=ransac_tol, seed=seed)
        result = _register_pair(objs_s, objs_m, params, solver, n_c, icp, cfg)
        gt = RigidTransform.from_flat(gt_flat)
        err_t = rte(result.transform.translation, gt.translation)
        err_r = rre(result.transform.rotation, gt.rotation)
        error = ""
    except (ColmError, ValueError, OSError) as exc:
        err_t = err_r = float("nan")
        error = f"{type(exc).__name__}: {exc}"
    wall_ms = (time.perf_counter() - start) * 1e3
    return idx, err_t, err_r, wall_ms, error


def cmd_eval(args) -> int:
    pair_rows = _read_pairs_csv(args.pairs)
    if not pair_rows:
        raise ingest.IngestError(f"{args.pairs}: no pairs listed")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks = [
        (
            idx,
            str(Path(args.query_dir) / src),
            str(Path(args.map_dir) / dst),
            tuple(gt.to_flat().tolist()),
            args.params,
            args.net,
            args.solver,
            args.nc,
            args.icp,
            args.seed,
            args.ransac_iters,
            args.ransac_tol,
        )
        for idx, (src, dst, gt) in enumerate(pair_rows)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = sorted(pool.map(_eval_one, tasks))
    else:
        rows = [_eval_one(t) for t in tasks]

    solver_tag = args.solver + ("+icp" if args.icp else "")
    results_path = out_dir / "results.csv"
    failures = 0
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "solver", "rte_m", "rre_deg",
                         "success_03_1", "success_05_5", "wall_ms"])
        for idx, err_t, err_r, wall_ms, error in rows:
            if error:
                failures += 1
                log.warning("pair %d failed: %s", idx, error)
            deg = np.degrees(err_r)
            writer.writerow([
                idx, solver_tag, f"{err_t:.6f}", f"{deg:.6f}",
                int(err_t < 0.3 and deg < 1.0),
                int(err_t < 0.5 and deg < 5.0),
                f"{wall_ms:.2f}",
            ])

    thresholds = [(0.3, 1.0), (0.5, 5.0)]
    if args.tau_t is not None and args.tau_r is not None:
        thresholds.append((args.tau_t, args.tau_r))
    metrics = np.array([[r[1], r[2]] for r in rows])
    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_t_m", "tau_r_deg", "recall", "mean_rte_m",
                         "mean_rre_deg", "n_pairs", "n_failures"])
        for tau_t, tau_r in thresholds:
            ok = (metrics[:, 0] < tau_t) & (np.degrees(metrics[:, 1]) < tau_r)
            recall = float(ok.mean())
            mean_t = float(metrics[ok, 0].mean()) if ok.any() else float("nan")
            mean_r = float(np.degrees(metrics[ok, 1]).mean()) if ok.any() else float("nan")
            writer.writerow([tau_t, tau_r, f"{recall:.4f}", f"{mean_t:.6f}",
                             f"{mean_r:.6f}", len(rows), failures])
            print(f"recall@{tau_t}m/{tau_r}deg: {recall:.4f} "
                  f"(mean RTE {mean_t:.4f} m, mean RRE {mean_r:.4f} deg)")
    if failures:
        print(f"failures: {failures}/{len(rows)}")

    params_hash = None
    if args.params:
        params_hash = blob_sha1(Path(args.params).read_bytes())
    RunManifest(
        command="eval",
        config={"solver": args.solver, "nc": args.nc, "icp": args.icp,
                "net": args.net, "ransac_iters": args.ransac_iters,
                "ransac_tol": args.ransac_tol, "jobs": args.jobs},
        seeds={"seed": args.seed},
        inputs=[str(args.pairs), str(args.query_dir), str(args.map_dir)]
        + ([str(args.params)] if args.params else []),
        outputs=[str(results_path), str(summary_path)],
        params_hash=params_hash,
    ).write(out_dir)
    return EXIT_OK


# ----------------------------- train ----------------------------------------


def _write_curves(path: Path, epochs) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "val_precision", "wall_s"])
        for e in epochs:
            writer.writerow([e.epoch, f"{e.lr:.10g}", f"{e.train_loss:.10g}",
                             f"{e.val_precision:.6f}", f"{e.wall_s:.3f}"])


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_cfg = SceneConfig(count_range=(args.count_min, args.count_max),
                            min_spacing=args.spacing)
    perturb_cfg = PerturbConfig(
        yaw_max_deg=args.yaw, translation_max=args.trans,
        jitter_sigma=args.jitter, drop_rate=args.drop,
    )
    train_pairs = make_registration_pairs(scene_cfg, perturb_cfg, args.pairs,
                                          seed=args.seed)
    val_pairs = make_registration_pairs(scene_cfg, perturb_cfg, args.val,
                                        seed=args.seed + 1)
    net_cfg = NetConfig.toy() if args.net == "toy" else NetConfig()
    params = init_params(net_cfg, args.seed)
    train_cfg = TrainConfig(batch_size=args.batch, epochs=args.epochs,
                            learning_rate=args.lr, yaw_max_deg=args.yaw,
                            jitter_sigma=args.jitter, seed=args.seed)

    curves_path = out_dir / "curves.csv"
    try:
        result = train_toy(train_pairs, val_pairs, params, train_cfg, LossConfig())
    except DivergenceError as exc:
        _write_curves(curves_path, exc.history)
        last = exc.history[-1].epoch if exc.history else 0
        print(f"divergence: {exc} (last finite epoch {last})", file=sys.stderr)
        return EXIT_DIVERGED

    ckpt_path = out_dir / "checkpoint.colp"
    save_params(ckpt_path, params)
    _write_curves(curves_path, result.epochs)
    final = result.epochs[-1]
    print(f"trained {args.epochs} epochs: loss {result.epochs[0].train_loss:.4f} "
          f"-> {final.train_loss:.4f}, val precision {final.val_precision:.3f}")
    print(f"checkpoint: {ckpt_path}")

    RunManifest(
        command="train",
        config={"net": args.net, **asdict(train_cfg), **asdict(perturb_cfg),
                "count_range": [args.count_min, args.count_max],
                "spacing": args.spacing, "n_train": args.pairs, "n_val": args.val},
        seeds={"seed": args.seed},
        outputs=[str(ckpt_path), str(curves_path)],
        params_hash=blob_sha1(ckpt_path.read_bytes()),
    ).write(out_dir)
    return EXIT_OK


# ----------------------------- synth ----------------------------------------


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    map_dir = out_dir / "map"
    query_dir = out_dir / "query"
    map_dir.mkdir(parents=True, exist_ok=True)
    query_dir.mkdir(parents=True, exist_ok=True)

    scene_cfg = SceneConfig(count_range=(args.count_min, args.count_max),
                            min_spacing=args.spacing)
    perturb_cfg = PerturbConfig(
        yaw_max_deg=args.yaw, translation_max=args.trans,
        jitter_sigma=args.jitter, drop_rate=args.drop,
        insert_rate=args.insert, flip_rate=args.flip,
    )
    pairs = make_registration_pairs(scene_cfg, perturb_cfg, args.count,
                                    seed=args.seed)

    identity = RigidTransform.identity()
    entries = []
    rows = []
    for i, pair in enumerate(pairs):
        name = f"{i:04d}.cor"
        (map_dir / name).write_bytes(codec.encode_scan(pair.source))
        (query_dir / name).write_bytes(codec.encode_scan(pair.target))
        entries.append(codec.MapEntry(i, identity, pair.source))
        # Ground truth maps the query scan back onto its map scan.
        rows.append((name, name, invert(pair.transform)))

    map_path = out_dir / "map.cormap"
    codec.write_map(map_path, codec.MapFile(tuple(entries)))
    pairs_path = out_dir / "pairs.csv"
    _write_pairs_csv(pairs_path, rows)
    print(f"wrote {len(pairs)} scene pairs under {out_dir}")

    RunManifest(
        command="synth",
        config={**asdict(perturb_cfg), "count_range": [args.count_min, args.count_max],
                "spacing": args.spacing, "count": args.count},
        seeds={"seed": args.seed},
        outputs=[str(map_path), str(pairs_path), str(map_dir), str(query_dir)],
    ).write(out_dir)
    return EXIT_OK


# ----------------------------- pack / report --------------------------------


def cmd_pack(args) -> int:
    paths = [Path(p) for p in args.cor]
    track = ingest.read_poses_txt(args.poses) if args.poses else None
    if track is not None and len(track) != len(paths):
        raise ingest.IngestError(
            f"{len(track)} poses for {len(paths)} scan records"
        )
    entries = []
    for i, path in enumerate(paths):
        scan_id = int(path.stem) if path.stem.isdigit() else i
        pose = track.transforms[i] if track else RigidTransform.identity()
        entries.append(codec.MapEntry(scan_id, pose, codec.read_scan(path)))
    entries.sort(key=lambda e: e.scan_id)
    map_file = codec.MapFile(tuple(entries))
    data = codec.encode_map(map_file)
    Path(args.out).write_bytes(data)
    print(f"{args.out}: {len(entries)} scans, {len(data)} bytes")
    return EXIT_OK


def cmd_report(args) -> int:
    map_file = codec.read_map(args.map)
    report = codec.storage_report(map_file, raw_point_count=args.raw_points)
    for line in report.lines():
        print(line)
    return EXIT_OK


# ----------------------------- parser ---------------------------------------


def _add_net_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", help="checkpoint file (.colp); omit for fresh "
                   "seeded init")
    p.add_argument("--net", choices=("toy", "full"), default="toy",
                   help="architecture when no checkpoint is given")
    p.add_argument("--solver", choices=("svd", "ransac"), default="ransac")
    p.add_argument("--nc", type=int, default=None,
                   help="correspondence count (default 15 svd / 60 ransac)")
    p.add_argument("--icp", action="store_true", help="refine with centroid ICP")
    p.add_argument("--ransac-iters", type=int, default=2048)
    p.add_argument("--ransac-tol", type=float, default=0.6)


def _add_perturb_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--drop", type=float, default=0.2)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--yaw", type=float, default=360.0)
    p.add_argument("--trans", type=float, default=3.0)
    p.add_argument("--count-min", type=int, default=20)
    p.add_argument("--count-max", type=int, default=40)
    p.add_argument("--spacing", type=float, default=2.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colm",
        description="Object-level compact LiDAR map registration.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="scans + labels -> .cor records")
    p.add_argument("--scans", nargs="+", required=True)
    p.add_argument("--labels", nargs="*", default=None,
                   help="default: scan path with .label suffix")
    p.add_argument("--classes", help="class map file (id = name lines)")
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--min-pts", type=int, default=5)
    p.add_argument("--max-points", type=int, default=24000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("register", help="align two .cor scans")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    _add_net_flags(p)
    p.add_argument("--gt", help="file with 12 ground-truth floats for RTE/RRE")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="batch registration from a pairs.csv")
    p.add_argument("--pairs", required=True)
    p.add_argument("--query-dir", required=True)
    p.add_argument("--map-dir", required=True)
    _add_net_flags(p)
    p.add_argument("--tau-t", type=float, default=None,
                   help="extra recall threshold: translation (m)")
    p.add_argument("--tau-r", type=float, default=None,
                   help="extra recall threshold: rotation (deg)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train the matcher on synthetic pairs")
    p.add_argument("--pairs", type=int, default=200, help="training pair count")
    p.add_argument("--val", type=int, default=100, help="held-out pair count")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--net", choices=("toy", "full"), default="toy")
    _add_perturb_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="generate a synthetic benchmark directory")
    p.add_argument("--count", type=int, default=100, help="scene pair count")
    _add_perturb_flags(p)
    p.add_argument("--insert", type=float, default=0.0)
    p.add_argument("--flip", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pack", help="bundle .cor files into a .cormap")
    p.add_argument("--cor", nargs="+", required=True)
    p.add_argument("--poses", help="12 floats per line, one pose per scan")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("report", help="storage statistics of a .cormap")
    p.add_argument("--map", required=True)
    p.add_argument("--raw-points", type=int, default=None,
                   help="raw point count for the compression ratio")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("COLM_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NO_SOLUTION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    except (ColmError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
