"""Readers for KITTI-style scan/label/pose files and evaluation pair
selection.

Scan files are packed little-endian float32 (x, y, z, intensity) records;
label files carry one little-endian uint32 per point whose low 16 bits are
the semantic class; pose files hold 12 whitespace-separated floats per line
(row-major [R|t]). A small text config maps dataset label ids onto the
internal class ids.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .core import ColmError, RigidTransform, _reorthonormalize

UNKNOWN_CLASS = 0xFFFF

# Canonical order of the static classes; internal ids 0..6.
STATIC_CLASS_NAMES = (
    "sidewalk",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "pole",
    "traffic_sign",
)


class IngestError(ColmError):
    pass


class UnreadableFileError(IngestError):
    pass


class LengthMismatchError(IngestError):
    pass


class CountMismatchError(IngestError):
    pass


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc


def read_point_bin(path) -> NDArray[np.float64]:
    """Points from a packed binary scan: 4 little-endian float32 per record
    (x, y, z, intensity); intensity is discarded."""
    raw = _read_bytes(path)
    if len(raw) % 16 != 0:
        raise LengthMismatchError(
            f"{path}: {len(raw)} bytes is not a whole number of 16-byte records"
        )
    flat = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return flat[:, :3].astype(np.float64)


def read_labels(path, point_count: int) -> NDArray[np.uint16]:
    """Per-point semantic classes: low 16 bits of each little-endian uint32;
    the high (instance) bits are discarded."""
    raw = _read_bytes(path)
    if len(raw) != 4 * point_count:
        raise CountMismatchError(
            f"{path}: {len(raw) // 4} labels for {point_count} points"
        )
    values = np.frombuffer(raw, dtype="<u4")
    return (values & 0xFFFF).astype(np.uint16)


# ----------------------------- poses and pairs ------------------------------


@dataclass(frozen=True)
class PoseTrack:
    frames: NDArray[np.int64]
    transforms: tuple[RigidTransform, ...]

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        if frames.size != len(self.transforms):
            raise ValueError(
                f"{frames.size} frames for {len(self.transforms)} transforms"
            )
        if frames.size and (np.diff(frames) <= 0).any():
            raise ValueError("frame indices must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "transforms", tuple(self.transforms))

    def __len__(self) -> int:
        return len(self.transforms)

    def translations(self) -> NDArray[np.float64]:
        if not self.transforms:
            return np.empty((0, 3))
        return np.stack([t.translation for t in self.transforms])


def read_poses_txt(path, orthonormalize: bool = True) -> PoseTrack:
    """One pose per line: 12 floats, row-major [R|t]; frame index = line
    number. Rotations are re-orthonormalized by default since recorded poses
    often carry small numeric drift."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    transforms = []
    for line_no, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 12:
            raise IngestError(
                f"{path} line {line_no + 1}: expected 12 values, got {len(parts)}"
            )
        flat = np.array([float(p) for p in parts])
        rot = flat.reshape(3, 4)[:, :3]
        if orthonormalize:
            rot = _reorthonormalize(rot)
        transforms.append(RigidTransform(rot, flat.reshape(3, 4)[:, 3]))
    return PoseTrack(np.arange(len(transforms)), tuple(transforms))


def select_pairs(track_a: PoseTrack, track_b: PoseTrack, max_dist: float,
                 min_gap: int = 0) -> list[tuple[int, int]]:
    """All (frame_a, frame_b) pairs with translational distance strictly
    below max_dist. When both arguments are the same track object, only
    frame_a < frame_b pairs at least min_gap frames apart are kept. Output
    sorted by (frame_a, frame_b)."""
    if len(track_a) == 0 or len(track_b) == 0:
        raise ValueError("select_pairs needs non-empty tracks")
    ta = track_a.translations()
    tb = track_b.translations()
    d = np.sqrt(((ta[:, None, :] - tb[None, :, :]) ** 2).sum(axis=2))
    keep = d < max_dist
    if track_a is track_b:
        gap = np.abs(track_a.frames[:, None] - track_b.frames[None, :])
        keep &= (track_a.frames[:, None] < track_b.frames[None, :]) & (gap >= min_gap)
    ii, jj = np.nonzero(keep)
    return sorted(zip(track_a.frames[ii].tolist(), track_b.frames[jj].tolist()))


# ----------------------------- class mapping --------------------------------


def _normalize_name(name: str) -> str:
    return "_".join(name.strip().lower().replace("-", " ").split())


@dataclass(frozen=True)
class ClassMap:
    """Dataset label id -> internal class id.

    Static class names map onto the canonical ids 0..6; any other named
    class gets the next free id in file order. Unmapped dataset ids resolve
    to UNKNOWN_CLASS.
    """

    id_map: dict[int, int]
    names: tuple[str, ...]

    def apply(self, labels) -> NDArray[np.uint16]:
        raw = np.asarray(labels).reshape(-1)
        out = np.full(raw.shape, UNKNOWN_CLASS, dtype=np.uint16)
        for src, dst in self.id_map.items():
            out[raw == src] = dst
        return out


def parse_class_map(text: str) -> ClassMap:
    """Parse "id = name" lines; blank lines and # comments are ignored."""
    static_index = {name: i for i, name in enumerate(STATIC_CLASS_NAMES)}
    names = list(STATIC_CLASS_NAMES)
    id_map: dict[int, int] = {}
    for line_no, line in enumerate(text.splitlines()):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise IngestError(f"class map line {line_no + 1}: expected 'id = name'")
        left, right = body.split("=", 1)
        try:
            raw_id = int(left.strip(), 0)
        except ValueError as exc:
            raise IngestError(
                f"class map line {line_no + 1}: bad id {left.strip()!r}"
            ) from exc
        name = _normalize_name(right)
        if not name:
            raise IngestError(f"class map line {line_no + 1}: empty class name")
        if name in static_index:
            internal = static_index[name]
        elif name in names:
            internal = names.index(name)
        else:
            names.append(name)
            internal = len(names) - 1
        if raw_id in id_map and id_map[raw_id] != internal:
            raise IngestError(
                f"class map line {line_no + 1}: id {raw_id} mapped twice"
            )
        id_map[raw_id] = internal
    return ClassMap(id_map, tuple(names))


def read_class_map(path) -> ClassMap:
    try:
        return parse_class_map(Path(path).read_text())
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
