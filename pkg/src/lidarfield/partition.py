"""Two-level scene partition: trajectory blocks and point-segment regions.

Blocks are cut along the trajectory whenever accumulated yaw change exceeds a
threshold, then highly overlapping blocks merge. Inside a block, the fused
cloud is split into ground and non-ground by per-column height thresholding;
non-ground points cluster into fixed-radius connected components; each ground
tile and each cluster becomes a child region (a padded AABB). Every training
ray records the child whose box contains its endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import ScanFormatError
from .geometry import Aabb, iou
from .io import PointCloud, Pose


@dataclass(frozen=True)
class ChildRegion:
    box: Aabb
    segment_id: int
    kind: str  # "ground" | "object"

    def __post_init__(self):
        if self.kind not in ("ground", "object"):
            raise ValueError(f"unknown child kind {self.kind!r}")


@dataclass
class ParentBlock:
    box: Aabb
    frame_ids: list[int]
    children: list[ChildRegion] = dc_field(default_factory=list)


@dataclass(frozen=True)
class LidarRay:
    """One emitted beam: origin, measured endpoint, and its owning child."""

    origin: np.ndarray
    endpoint: np.ndarray
    depth: float
    dir: np.ndarray
    child_id: int | None = None

    def __post_init__(self):
        o = np.asarray(self.origin, float).reshape(3)
        p = np.asarray(self.endpoint, float).reshape(3)
        d = np.asarray(self.dir, float).reshape(3)
        if abs(np.linalg.norm(p - o) - self.depth) > 1e-9 * max(1.0, self.depth):
            raise ValueError("depth does not match ||endpoint - origin||")
        if np.max(np.abs((p - o) / self.depth - d)) > 1e-9:
            raise ValueError("direction does not match (endpoint - origin) / depth")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "endpoint", p)
        object.__setattr__(self, "dir", d)


class RayBundle:
    """Column-array container for many rays (child_id -1 marks 'no child')."""

    def __init__(self, origins, endpoints, depths, dirs, child_ids, frame_ids):
        self.origins = np.asarray(origins, dtype=float).reshape(-1, 3)
        self.endpoints = np.asarray(endpoints, dtype=float).reshape(-1, 3)
        self.depths = np.asarray(depths, dtype=float).reshape(-1)
        self.dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
        self.child_ids = np.asarray(child_ids, dtype=np.int64).reshape(-1)
        self.frame_ids = np.asarray(frame_ids, dtype=np.int64).reshape(-1)

    def __len__(self) -> int:
        return self.depths.shape[0]

    def __getitem__(self, i: int) -> LidarRay:
        cid = int(self.child_ids[i])
        return LidarRay(
            self.origins[i],
            self.endpoints[i],
            float(self.depths[i]),
            self.dirs[i],
            None if cid < 0 else cid,
        )

    @classmethod
    def concatenate(cls, bundles: list["RayBundle"]) -> "RayBundle":
        if not bundles:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), [], np.zeros((0, 3)), [], [])
        return cls(
            np.concatenate([b.origins for b in bundles]),
            np.concatenate([b.endpoints for b in bundles]),
            np.concatenate([b.depths for b in bundles]),
            np.concatenate([b.dirs for b in bundles]),
            np.concatenate([b.child_ids for b in bundles]),
            np.concatenate([b.frame_ids for b in bundles]),
        )


@dataclass(frozen=True)
class PartitionParams:
    yaw_threshold_deg: float = 30.0
    margin: float = 1.0
    merge_iou: float = 0.5
    ground_cell: float = 1.0
    ground_h_thresh: float = 0.3
    cluster_radius: float = 0.5
    cluster_min_points: int = 10
    min_thickness: float = 0.2
    ground_tile: float = 10.0


def _yaw(rotation: np.ndarray) -> float:
    return float(np.arctan2(rotation[1, 0], rotation[0, 0]))


def build_parent_blocks(
    poses: list[Pose],
    clouds: list[PointCloud],
    yaw_threshold: float = 30.0,
    margin: float = 1.0,
    merge_iou: float = 0.5,
) -> list[ParentBlock]:
    """Cut trajectory blocks on accumulated yaw change, then merge overlaps.

    yaw_threshold is in degrees; each block's box is the AABB of its frames'
    fused world points expanded by `margin` on every side.
    """
    if len(poses) != len(clouds):
        raise ValueError("poses and clouds must align by frame")
    if not poses:
        return []
    thresh = np.deg2rad(yaw_threshold)
    groups: list[list[int]] = [[0]]
    cum = 0.0
    prev_yaw = _yaw(poses[0].rotation)
    for i in range(1, len(poses)):
        yaw = _yaw(poses[i].rotation)
        step = abs(float(np.arctan2(np.sin(yaw - prev_yaw), np.cos(yaw - prev_yaw))))
        prev_yaw = yaw
        cum += step
        if cum > thresh:
            groups.append([i])
            cum = 0.0
        else:
            groups[-1].append(i)

    blocks = []
    for frame_ids in groups:
        pts = np.concatenate([clouds[i].points for i in frame_ids])
        if pts.shape[0] == 0:
            continue
        box = Aabb.of_points(pts)
        blocks.append(ParentBlock(Aabb(box.min_corner - margin, box.max_corner + margin), list(frame_ids)))

    merged = True
    while merged and len(blocks) > 1:
        merged = False
        for a in range(len(blocks)):
            for b in range(a + 1, len(blocks)):
                if iou(blocks[a].box, blocks[b].box) > merge_iou:
                    blocks[a] = ParentBlock(
                        blocks[a].box.union(blocks[b].box),
                        sorted(blocks[a].frame_ids + blocks[b].frame_ids),
                    )
                    del blocks[b]
                    merged = True
                    break
            if merged:
                break
    return blocks


def extract_ground(cloud: PointCloud, cell: float = 1.0, h_thresh: float = 0.3):
    """Split a cloud into (ground, non_ground) by per-column lowest-point height.

    The xy plane is gridded into cell x cell columns; points within h_thresh
    of their column's lowest point count as ground. Exhaustive and disjoint.
    """
    if cell <= 0 or h_thresh <= 0:
        raise ValueError("cell and h_thresh must be positive")
    pts = cloud.points
    if pts.shape[0] == 0:
        empty = PointCloud(np.zeros((0, 3)), cloud.frame_id)
        return empty, empty
    cols = np.floor(pts[:, :2] / cell).astype(np.int64)
    _, inverse = np.unique(cols, axis=0, return_inverse=True)
    min_z = np.full(inverse.max() + 1, np.inf)
    np.minimum.at(min_z, inverse, pts[:, 2])
    ground_mask = pts[:, 2] <= min_z[inverse] + h_thresh
    return (
        PointCloud(pts[ground_mask], cloud.frame_id),
        PointCloud(pts[~ground_mask], cloud.frame_id),
    )


def ground_mask(cloud: PointCloud, cell: float = 1.0, h_thresh: float = 0.3) -> np.ndarray:
    """Boolean ground mask (same rule as extract_ground, index-preserving)."""
    pts = cloud.points
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    cols = np.floor(pts[:, :2] / cell).astype(np.int64)
    _, inverse = np.unique(cols, axis=0, return_inverse=True)
    min_z = np.full(inverse.max() + 1, np.inf)
    np.minimum.at(min_z, inverse, pts[:, 2])
    return pts[:, 2] <= min_z[inverse] + h_thresh


def cluster_regions(
    non_ground: PointCloud, radius: float = 0.5, min_points: int = 10
) -> list[np.ndarray]:
    """Fixed-radius connected components; small components drop as noise.

    Returns sorted index arrays into `non_ground.points`, ordered by their
    smallest member index. Linking distance is closed (<= radius).
    """
    if radius <= 0 or min_points < 1:
        raise ValueError("radius must be positive and min_points >= 1")
    pts = non_ground.points
    n = pts.shape[0]
    if n == 0:
        return []
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    if pairs.size:
        data = np.ones(pairs.shape[0], dtype=np.int8)
        adj = coo_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
    else:
        labels = np.arange(n)
    segments = []
    for lab in np.unique(labels):
        idx = np.nonzero(labels == lab)[0]
        if idx.size >= min_points:
            segments.append(np.sort(idx))
    segments.sort(key=lambda idx: int(idx[0]))
    return segments


def _padded_box(points: np.ndarray, min_thickness: float) -> Aabb:
    lo, hi = points.min(axis=0), points.max(axis=0)
    thin = (hi - lo) < min_thickness
    center = 0.5 * (lo + hi)
    lo = np.where(thin, center - 0.5 * min_thickness, lo)
    hi = np.where(thin, center + 0.5 * min_thickness, hi)
    return Aabb(lo, hi)


def build_child_regions(
    ground: PointCloud,
    segments: list[np.ndarray],
    non_ground: PointCloud | None = None,
    min_thickness: float = 0.2,
    ground_tile: float = 10.0,
) -> list[ChildRegion]:
    """One child per ground tile plus one per object segment.

    Ground is tiled into footprints of at most ground_tile meters so a whole
    road does not collapse into one degenerate, block-spanning child. Every
    box side is padded up to min_thickness. segment indices refer to
    `non_ground.points` (required when segments are given).
    """
    children: list[ChildRegion] = []
    next_id = 0
    if len(ground) > 0:
        tiles = np.floor(ground.points[:, :2] / ground_tile).astype(np.int64)
        keys, inverse = np.unique(tiles, axis=0, return_inverse=True)
        for k in range(keys.shape[0]):
            pts = ground.points[inverse == k]
            children.append(ChildRegion(_padded_box(pts, min_thickness), next_id, "ground"))
            next_id += 1
    if segments:
        if non_ground is None:
            raise ValueError("segments given without their source cloud")
        for idx in segments:
            pts = non_ground.points[np.asarray(idx, dtype=np.int64)]
            children.append(ChildRegion(_padded_box(pts, min_thickness), next_id, "object"))
            next_id += 1
    return children


def assign_rays(frames: list[tuple[PointCloud, Pose]], parent: ParentBlock) -> RayBundle:
    """Build one ray per world-frame point and tag its owning child.

    Endpoint containment decides ownership; overlaps break toward the
    smaller-volume child, then the smaller segment_id. Points landing in no
    child get child_id -1.
    """
    order = sorted(parent.children, key=lambda c: (c.box.volume, c.segment_id))
    bundles = []
    for cloud, pose in frames:
        pts = cloud.points
        n = pts.shape[0]
        if n == 0:
            continue
        origin = pose.translation
        rel = pts - origin
        depths = np.linalg.norm(rel, axis=1)
        ok = depths > 1e-9  # zero-range returns carry no direction
        pts, rel, depths = pts[ok], rel[ok], depths[ok]
        dirs = rel / depths[:, None]
        child = np.full(pts.shape[0], -1, dtype=np.int64)
        for region in order:
            free = child < 0
            if not np.any(free):
                break
            inside = region.box.contains(pts[free])
            child[np.nonzero(free)[0][inside]] = region.segment_id
        bundles.append(
            RayBundle(
                np.broadcast_to(origin, pts.shape).copy(),
                pts,
                depths,
                dirs,
                child,
                np.full(pts.shape[0], cloud.frame_id, dtype=np.int64),
            )
        )
    return RayBundle.concatenate(bundles)


def partition_frames(
    clouds: list[PointCloud], poses: list[Pose], params: PartitionParams
) -> list[ParentBlock]:
    """Full pipeline: blocks along the trajectory, children inside each block."""
    blocks = build_parent_blocks(
        poses, clouds, params.yaw_threshold_deg, params.margin, params.merge_iou
    )
    for block in blocks:
        # frame ids are positions into the clouds/poses given to this call
        fused = PointCloud(np.concatenate([clouds[i].points for i in block.frame_ids]))
        ground, non_ground = extract_ground(fused, params.ground_cell, params.ground_h_thresh)
        segments = cluster_regions(non_ground, params.cluster_radius, params.cluster_min_points)
        children = build_child_regions(
            ground, segments, non_ground, params.min_thickness, params.ground_tile
        )
        block.children = [
            ChildRegion(c.box.clipped_to(block.box), c.segment_id, c.kind) for c in children
        ]
    return blocks


HIERARCHY_HEADER = "# lidarfield hierarchy v1"


def write_hierarchy(path, blocks: list[ParentBlock]) -> None:
    """Plain-text sidecar: one line per box (kind, id, six corner coords)."""
    lines = [HIERARCHY_HEADER]
    for bi, block in enumerate(blocks):
        lo, hi = block.box.min_corner, block.box.max_corner
        coords = " ".join(f"{v:.6f}" for v in np.concatenate([lo, hi]))
        lines.append(f"parent {bi} {coords}")
        lines.append("# frames " + " ".join(str(i) for i in block.frame_ids))
        for child in block.children:
            lo, hi = child.box.min_corner, child.box.max_corner
            coords = " ".join(f"{v:.6f}" for v in np.concatenate([lo, hi]))
            lines.append(f"{child.kind} {child.segment_id} {coords}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_hierarchy(path) -> list[ParentBlock]:
    blocks: list[ParentBlock] = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# frames") and blocks:
                    blocks[-1].frame_ids = [int(tok) for tok in line.split()[2:]]
                continue
            tokens = line.split()
            if len(tokens) != 8:
                raise ScanFormatError(f"{path}:{lineno}: expected 8 fields, got {len(tokens)}")
            kind, seg = tokens[0], int(tokens[1])
            vals = [float(v) for v in tokens[2:]]
            box = Aabb(vals[:3], vals[3:])
            if kind == "parent":
                blocks.append(ParentBlock(box, []))
            elif kind in ("ground", "object"):
                if not blocks:
                    raise ScanFormatError(f"{path}:{lineno}: child before any parent")
                blocks[-1].children.append(ChildRegion(box, seg, kind))
            else:
                raise ScanFormatError(f"{path}:{lineno}: unknown record kind {kind!r}")
    return blocks
