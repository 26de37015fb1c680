"""Point-cloud reconstruction and pre-processing.

Back-projects RGB-D frames through a pinhole camera into world-frame colored
clouds, crops to the workspace box, downsamples with farthest point sampling,
and applies training-time point dropout. All operations are pure functions of
their inputs plus an explicit rng, so they parallelize per view and per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CAMERA_FRAME = "camera"
WORLD_FRAME = "world"


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a rigid camera-to-world transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    extrinsic: np.ndarray  # 4x4, camera -> world
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        ext = np.asarray(self.extrinsic, dtype=np.float64)
        if ext.shape != (4, 4):
            raise ValueError(f"extrinsic must be 4x4, got {ext.shape}")
        rot = ext[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or not np.isclose(np.linalg.det(rot), 1.0, atol=1e-6):
            raise ValueError("extrinsic rotation block is not a proper rotation (orthonormal, det +1)")
        object.__setattr__(self, "extrinsic", ext)

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsic[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsic[:3, 3]


@dataclass
class PointCloud:
    """Colored 3D points in a named reference frame."""

    positions: np.ndarray  # (N, 3) meters
    colors: np.ndarray  # (N, 3) in [0, 1]
    frame: str = WORLD_FRAME

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) != len(self.colors):
            raise ValueError(f"positions ({len(self.positions)}) and colors ({len(self.colors)}) differ in length")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions contain non-finite values")
        if len(self.colors) and (self.colors.min() < 0.0 or self.colors.max() > 1.0):
            raise ValueError("colors must lie in [0, 1]")
        if self.frame not in (CAMERA_FRAME, WORLD_FRAME):
            raise ValueError(f"unknown frame {self.frame!r}")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class CropBox:
    """Axis-aligned workspace box, boundary inclusive."""

    center: tuple[float, float, float] = (0.0, 0.0, 0.5)
    half_extents: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if not all(h > 0 for h in self.half_extents):
            raise ValueError(f"half extents must be positive, got {self.half_extents}")

    def contains(self, points: np.ndarray) -> np.ndarray:
        delta = np.abs(np.asarray(points) - np.asarray(self.center))
        return (delta <= np.asarray(self.half_extents)).all(axis=-1)


def backproject(depth: np.ndarray, color: np.ndarray, cam: CameraModel) -> PointCloud:
    """Lift a depth/color image pair into a world-frame cloud.

    Pixels with zero or non-finite depth are invalid and excluded. Depth is the
    camera-frame z coordinate in meters.
    """
    depth = np.asarray(depth, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)
    if depth.shape != (cam.height, cam.width):
        raise ValueError(f"depth shape {depth.shape} does not match camera ({cam.height}, {cam.width})")
    if color.shape != (cam.height, cam.width, 3):
        raise ValueError(f"color shape {color.shape} does not match camera ({cam.height}, {cam.width}, 3)")

    valid = np.isfinite(depth) & (depth > 0)
    v_idx, u_idx = np.nonzero(valid)
    d = depth[v_idx, u_idx]
    x = (u_idx - cam.cx) * d / cam.fx
    y = (v_idx - cam.cy) * d / cam.fy
    pts_cam = np.stack([x, y, d], axis=1)
    pts_world = pts_cam @ cam.rotation.T + cam.translation
    return PointCloud(pts_world, color[v_idx, u_idx], frame=WORLD_FRAME)


def project(points_world: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """World points to (pixel coordinates (u, v), camera depth). Inverse of backproject."""
    pts = np.asarray(points_world, dtype=np.float64).reshape(-1, 3)
    pts_cam = (pts - cam.translation) @ cam.rotation
    z = pts_cam[:, 2]
    u = cam.fx * pts_cam[:, 0] / z + cam.cx
    v = cam.fy * pts_cam[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1), z


def crop(cloud: PointCloud, box: CropBox) -> PointCloud:
    """Keep exactly the points inside the box (boundary inclusive), order preserved."""
    if cloud.frame != WORLD_FRAME:
        raise ValueError("crop expects a world-frame cloud")
    keep = box.contains(cloud.positions) if len(cloud) else np.zeros(0, dtype=bool)
    return PointCloud(cloud.positions[keep], cloud.colors[keep], frame=cloud.frame)


def fps_indices(positions: np.ndarray, k: int, start: int) -> np.ndarray:
    """Greedy maximin (farthest point) sampling from a given start index.

    Squared Euclidean distances; ties resolve to the lowest index. Returns all
    indices when the cloud has at most k points.
    """
    n = len(positions)
    if k < 0:
        raise ValueError("k must be non-negative")
    if n <= k:
        return np.arange(n)
    if k == 0:
        return np.zeros(0, dtype=np.intp)
    positions = np.asarray(positions, dtype=np.float64)
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = start
    dist = np.sum((positions - positions[start]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        np.minimum(dist, np.sum((positions - positions[nxt]) ** 2, axis=1), out=dist)
    return chosen


def fps(cloud: PointCloud, k: int, rng: np.random.Generator) -> PointCloud:
    """Farthest point sampling; the start index is drawn from the provided rng."""
    if len(cloud) == 0 or len(cloud) <= k:
        if k > 0:
            rng.integers(len(cloud)) if len(cloud) else None  # keep the rng stream aligned
        return PointCloud(cloud.positions.copy(), cloud.colors.copy(), frame=cloud.frame)
    start = int(rng.integers(len(cloud)))
    idx = fps_indices(cloud.positions, k, start)
    return PointCloud(cloud.positions[idx], cloud.colors[idx], frame=cloud.frame)


def dropout(cloud: PointCloud, rate: float, rng: np.random.Generator) -> PointCloud:
    """Independently drop points with probability ``rate``; at least one point survives."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or len(cloud) == 0:
        return cloud
    keep = rng.random(len(cloud)) >= rate
    while not keep.any():
        keep = rng.random(len(cloud)) >= rate
    return PointCloud(cloud.positions[keep], cloud.colors[keep], frame=cloud.frame)


@dataclass
class FrameStack:
    """Per-view history-stacked point tensor plus assembly metadata."""

    views: list[np.ndarray]  # each (history, target_points, 6) float32, xyz + rgb
    empty_after_crop: list[bool] = field(default_factory=list)


def _fit_to_budget(cloud: PointCloud, box: CropBox, target: int, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Crop, FPS to the token budget, and pad by repeating the final point."""
    kept = crop(cloud, box)
    empty = len(kept) == 0
    if empty:
        # box-center sentinel keeps the tensor shape; flagged in metadata
        sentinel = np.concatenate([np.asarray(box.center, dtype=np.float64), np.zeros(3)])
        return np.tile(sentinel, (target, 1)).astype(np.float32), True
    sampled = fps(kept, target, rng)
    pts = np.concatenate([sampled.positions, sampled.colors], axis=1)
    if len(pts) < target:
        pad = np.tile(pts[-1], (target - len(pts), 1))
        pts = np.concatenate([pts, pad], axis=0)
    return pts.astype(np.float32), False


def assemble_frame(
    current: list[PointCloud],
    previous: list[PointCloud] | None,
    target_points: int,
    box: CropBox,
    rng: np.random.Generator,
) -> FrameStack:
    """Build the 2-frame history stack per view: crop, FPS, pad, then stack.

    ``previous`` is the single prior frame's clouds (one per view); at episode
    start pass ``None`` and the current frame is duplicated into the history
    slot. Each view yields a (2, target_points, 6) float32 tensor ordered
    (previous, current).
    """
    if previous is not None and len(previous) != len(current):
        raise ValueError(f"history has {len(previous)} views, current has {len(current)}")
    views: list[np.ndarray] = []
    flags: list[bool] = []
    for i, cur in enumerate(current):
        prev = cur if previous is None else previous[i]
        prev_pts, prev_empty = _fit_to_budget(prev, box, target_points, rng)
        cur_pts, cur_empty = _fit_to_budget(cur, box, target_points, rng)
        views.append(np.stack([prev_pts, cur_pts], axis=0))
        flags.append(prev_empty or cur_empty)
    return FrameStack(views=views, empty_after_crop=flags)


def write_ply(path: str | Path, cloud: PointCloud) -> None:
    """ASCII PLY debug dump (x y z r g b per vertex) for external viewers."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property float red",
        "property float green",
        "property float blue",
        "end_header",
    ]
    for p, c in zip(cloud.positions, cloud.colors):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]:.4f} {c[1]:.4f} {c[2]:.4f}")
    Path(path).write_text("\n".join(lines) + "\n")
