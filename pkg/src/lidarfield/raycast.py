"""Voxel-map ray-casting baseline for novel view synthesis.

Training clouds are quantized into a lattice-aligned occupancy grid; views
are synthesized by integer grid traversal that reports the distance to the
entry face of the first occupied cell. Traversal runs in the compiled kernel
when available (see lidarfield.kernels).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CheckpointError
from .io import PointCloud

MAGIC = b"LFVOX001"


@dataclass(frozen=True)
class VoxelMap:
    voxel: float
    origin: np.ndarray  # lattice-aligned min corner (multiple of voxel)
    dims: np.ndarray  # (3,) int64 cell counts
    cells: np.ndarray  # sorted linearized occupied-cell indices

    def __post_init__(self):
        if self.voxel <= 0:
            raise ValueError("voxel size must be positive")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "dims", np.asarray(self.dims, dtype=np.int64).reshape(3))
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int64).reshape(-1))

    @property
    def n_occupied(self) -> int:
        return self.cells.shape[0]


def build_voxel_map(clouds: list[PointCloud], voxel: float = 0.05) -> VoxelMap:
    """Occupancy grid over all points: cell(p) = floor((p - origin) / voxel)."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    pts = np.concatenate([c.points for c in clouds if len(c) > 0])
    if pts.shape[0] == 0:
        raise ValueError("cannot build a voxel map from empty clouds")
    origin = np.floor(pts.min(axis=0) / voxel) * voxel
    cell = np.floor((pts - origin) / voxel).astype(np.int64)
    dims = cell.max(axis=0) + 1
    strides = np.array([dims[1] * dims[2], dims[2], 1], dtype=np.int64)
    lin = np.unique(cell @ strides)
    return VoxelMap(voxel, origin, dims, lin)


def cast_rays_batch(vmap: VoxelMap, origins: np.ndarray, dirs: np.ndarray, t_max: float) -> np.ndarray:
    """Per-ray first-hit depths; NaN marks a miss."""
    depths = kernels.cast_rays(
        origins, dirs, float(t_max), vmap.voxel, vmap.origin, vmap.dims, vmap.cells
    )
    return np.where(depths < 0, np.nan, depths)


def cast_ray(vmap: VoxelMap, origin, dir, t_max: float) -> float | None:
    """Distance from origin to the entry face of the first occupied cell."""
    d = np.asarray(dir, dtype=float).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    depth = cast_rays_batch(vmap, np.reshape(origin, (1, 3)), d.reshape(1, 3), t_max)[0]
    return None if np.isnan(depth) else float(depth)


def save_voxel_map(path, vmap: VoxelMap) -> None:
    """Header (voxel size, origin, dims) plus the sorted occupied-cell list."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<d", vmap.voxel))
        f.write(struct.pack("<3d", *vmap.origin))
        f.write(struct.pack("<3q", *vmap.dims))
        f.write(struct.pack("<q", vmap.n_occupied))
        f.write(vmap.cells.astype("<i8").tobytes())


def load_voxel_map(path) -> VoxelMap:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 or blob[:8] != MAGIC:
        got = blob[:8].decode("latin1", errors="replace") if blob else "<empty>"
        raise CheckpointError(f"{path}: expected voxel map magic {MAGIC.decode()}, got {got!r}")
    header = struct.calcsize("<d3d3qq")
    if len(blob) < 8 + header:
        raise CheckpointError(f"{path}: truncated voxel map header")
    voxel, ox, oy, oz, dx, dy, dz, count = struct.unpack("<d3d3qq", blob[8 : 8 + header])
    body = blob[8 + header :]
    if len(body) != count * 8:
        raise CheckpointError(f"{path}: expected {count} cells, file holds {len(body) // 8}")
    cells = np.frombuffer(body, dtype="<i8")
    return VoxelMap(voxel, np.array([ox, oy, oz]), np.array([dx, dy, dz]), cells)
