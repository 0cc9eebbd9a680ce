"""Back-projection of labeled frames into a voxel-hashed point map with
temporal majority voting.

Each voxel keeps one label entry per observing frame (the within-frame
majority of the points that landed in it, ties to the smallest class id,
which makes frame updates order-insensitive). Entries older than the
voting window are evicted; the fused label is the window majority with
ties going to the most recent entry.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidPoseError, ShapeError

RIGID_TOL = 1e-6
DEFAULT_VOXEL_SIZE_M = 0.02
DEFAULT_VOTE_WINDOW = 9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidPoseError("focal lengths must be positive")


@dataclass(frozen=True)
class FramePose:
    """4×4 rigid camera-to-world transform."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidPoseError(f"pose must be 4x4, got {m.shape}")
        r = m[:3, :3]
        if np.abs(r.T @ r - np.eye(3)).max() > RIGID_TOL:
            raise InvalidPoseError("rotation block is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > RIGID_TOL:
            raise InvalidPoseError("rotation determinant must be +1")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > RIGID_TOL:
            raise InvalidPoseError("bottom row must be [0,0,0,1]")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "FramePose":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation, translation) -> "FramePose":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)


def backproject(
    label_map: np.ndarray,
    depth: np.ndarray,
    intrinsics: CameraIntrinsics,
    pose: FramePose,
    *,
    ignore_index: int | None = 0,
    max_range: float = 10.0,
):
    """Lift labeled pixels to world space; returns (points N×3, classes N).

    Pixels with non-positive or out-of-range depth are skipped, as are
    ignore-index pixels. Output order is the row-major pixel scan.
    """
    label_map = np.asarray(label_map)
    depth = np.asarray(depth, dtype=np.float64)
    if label_map.shape != depth.shape:
        raise ShapeError(f"label {label_map.shape} and depth {depth.shape} differ")
    h, w = depth.shape
    vv, uu = np.mgrid[0:h, 0:w]
    keep = (depth > 0.0) & (depth < max_range)
    if ignore_index is not None:
        keep &= label_map != ignore_index
    z = depth[keep]
    u = uu[keep].astype(np.float64)
    v = vv[keep].astype(np.float64)
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    cam = np.stack([x, y, z], axis=1)
    world = cam @ pose.matrix[:3, :3].T + pose.matrix[:3, 3]
    return world, label_map[keep].astype(np.int64)


def project(points: np.ndarray, intrinsics: CameraIntrinsics, pose: FramePose):
    """Forward projection (world→pixel); the oracle inverse of backproject."""
    m = np.linalg.inv(pose.matrix)
    cam = points @ m[:3, :3].T + m[:3, 3]
    z = cam[:, 2]
    u = cam[:, 0] * intrinsics.fx / z + intrinsics.cx
    v = cam[:, 1] * intrinsics.fy / z + intrinsics.cy
    return u, v, z


class _Voxel:
    __slots__ = ("pos_sum", "n", "votes", "fused")

    def __init__(self):
        self.pos_sum = np.zeros(3)
        self.n = 0
        self.votes: deque = deque()  # (frame_index, label), one entry per frame
        self.fused = -1


def _majority_most_recent(votes) -> int:
    """Window majority; among tied counts the label seen most recently wins."""
    counts: dict[int, int] = {}
    last_seen: dict[int, int] = {}
    for pos, (_, label) in enumerate(votes):
        counts[label] = counts.get(label, 0) + 1
        last_seen[label] = pos
    best = max(counts.values())
    return max((lbl for lbl, c in counts.items() if c == best), key=lambda l: last_seen[l])


class LabeledPointMap:
    """Voxel-hashed point store with per-voxel vote history."""

    def __init__(self, voxel_size: float = DEFAULT_VOXEL_SIZE_M, window: int = DEFAULT_VOTE_WINDOW):
        if voxel_size <= 0 or window < 1:
            raise ShapeError("voxel_size must be positive and window >= 1")
        self.voxel_size = voxel_size
        self.window = window
        self._voxels: dict[tuple, _Voxel] = {}
        self._last_frame: int | None = None

    def __len__(self) -> int:
        return len(self._voxels)

    def vote_update(self, points: np.ndarray, labels: np.ndarray, frame_index: int) -> "LabeledPointMap":
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise ShapeError(
                f"frame_index must strictly increase (got {frame_index} after {self._last_frame})"
            )
        self._last_frame = frame_index
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        labels = np.asarray(labels).reshape(-1)
        if len(points) != len(labels):
            raise ShapeError("points and labels length mismatch")
        keys = np.floor(points / self.voxel_size).astype(np.int64)
        frame_hits: dict[tuple, dict] = {}
        for row, label in zip(range(len(points)), labels.tolist()):
            key = tuple(keys[row])
            hit = frame_hits.setdefault(key, {"pos": np.zeros(3), "n": 0, "counts": {}})
            hit["pos"] += points[row]
            hit["n"] += 1
            hit["counts"][label] = hit["counts"].get(label, 0) + 1
        for key, hit in frame_hits.items():
            voxel = self._voxels.get(key)
            if voxel is None:
                voxel = self._voxels[key] = _Voxel()
            voxel.pos_sum += hit["pos"]
            voxel.n += hit["n"]
            best = max(hit["counts"].values())
            frame_label = min(lbl for lbl, c in hit["counts"].items() if c == best)
            voxel.votes.append((frame_index, frame_label))
            while voxel.votes and voxel.votes[0][0] <= frame_index - self.window:
                voxel.votes.popleft()
            while len(voxel.votes) > self.window:
                voxel.votes.popleft()
            voxel.fused = _majority_most_recent(voxel.votes)
        return self

    def items(self):
        """Deterministic traversal: sorted voxel keys."""
        for key in sorted(self._voxels):
            voxel = self._voxels[key]
            yield key, voxel.pos_sum / voxel.n, voxel.fused

    def fused_label(self, point) -> int:
        key = tuple(np.floor(np.asarray(point, dtype=np.float64) / self.voxel_size).astype(np.int64))
        voxel = self._voxels.get(key)
        return -1 if voxel is None else voxel.fused


def vote_update(pmap: LabeledPointMap, points, labels, frame_index: int) -> LabeledPointMap:
    return pmap.vote_update(points, labels, frame_index)


def export_cloud(pmap: LabeledPointMap, palette: np.ndarray, path) -> None:
    """Binary little-endian PLY: x,y,z float32; red,green,blue uint8; class uint8."""
    if len(pmap) == 0:
        raise ShapeError("cannot export an empty point map")
    palette = np.asarray(palette, dtype=np.uint8)
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {len(pmap)}",
            "property float x",
            "property float y",
            "property float z",
            "property uchar red",
            "property uchar green",
            "property uchar blue",
            "property uchar class",
            "end_header",
        ]
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        for _, pos, fused in pmap.items():
            r, g, b = palette[fused]
            fh.write(
                struct.pack(
                    "<fffBBBB",
                    float(pos[0]),
                    float(pos[1]),
                    float(pos[2]),
                    int(r),
                    int(g),
                    int(b),
                    int(fused) & 0xFF,
                )
            )


def read_intrinsics(path) -> CameraIntrinsics:
    """File format: single line `fx fy cx cy`."""
    parts = Path(path).read_text(encoding="utf-8").split()
    if len(parts) != 4:
        raise ShapeError(f"intrinsics file must hold exactly fx fy cx cy, got {len(parts)} values")
    fx, fy, cx, cy = (float(p) for p in parts)
    return CameraIntrinsics(fx, fy, cx, cy)


def read_trajectory(path) -> dict[int, FramePose]:
    """One line per frame: `frame_index tx ty tz r00 r01 r02 r10 ... r22`."""
    poses: dict[int, FramePose] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 13:
            raise ShapeError(f"trajectory line must hold 13 values, got {len(parts)}")
        frame = int(parts[0])
        t = np.array([float(v) for v in parts[1:4]])
        r = np.array([float(v) for v in parts[4:13]]).reshape(3, 3)
        poses[frame] = FramePose.from_rt(r, t)
    return poses


def write_trajectory(path, poses: dict[int, FramePose]) -> None:
    lines = []
    for frame in sorted(poses):
        m = poses[frame].matrix
        vals = [m[0, 3], m[1, 3], m[2, 3], *m[:3, :3].reshape(-1)]
        lines.append(str(frame) + " " + " ".join(f"{v:.9g}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_intrinsics(path, intrinsics: CameraIntrinsics) -> None:
    Path(path).write_text(
        f"{intrinsics.fx:.9g} {intrinsics.fy:.9g} {intrinsics.cx:.9g} {intrinsics.cy:.9g}\n",
        encoding="utf-8",
    )
