"""Scan/pose parsing, frame transforms, range filtering, and train/test splits.

Scan files are binary records of four little-endian float32 values
(x, y, z, intensity); the intensity channel is parsed and discarded.
Pose files carry one frame per line: 12 whitespace-separated numbers forming
a row-major 3x4 [R | t] matrix (sensor-to-world).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import PoseFormatError, ScanFormatError

RECORD_BYTES = 16


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3) float64, meters
    frame_id: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.frame_id < 0:
            raise ValueError("frame_id must be >= 0")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass(frozen=True)
class FrameSplit:
    train_ids: list[int]
    test_ids: list[int]
    sparsity: float

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train/test frame sets overlap")


def parse_scan(blob: bytes, frame_id: int = 0) -> PointCloud:
    """Decode one binary scan blob into a sensor-frame point cloud."""
    if len(blob) % RECORD_BYTES != 0:
        raise ScanFormatError(
            f"scan length {len(blob)} is not a multiple of {RECORD_BYTES} bytes"
        )
    raw = np.frombuffer(blob, dtype="<f4").reshape(-1, 4)
    pts = raw[:, :3].astype(float)
    bad = ~np.all(np.isfinite(raw), axis=1)
    if np.any(bad):
        raise ScanFormatError(f"non-finite value in scan record {int(np.argmax(bad))}")
    return PointCloud(pts, frame_id=frame_id)


def read_scan(path, frame_id: int = 0) -> PointCloud:
    with open(path, "rb") as f:
        return parse_scan(f.read(), frame_id=frame_id)


def write_scan(path, points_with_intensity: np.ndarray) -> None:
    """Write (N, 4) sensor-frame records as little-endian float32."""
    arr = np.asarray(points_with_intensity, dtype="<f4").reshape(-1, 4)
    with open(path, "wb") as f:
        f.write(arr.tobytes())


def _reorthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    fixed = u @ vt
    if np.linalg.det(fixed) < 0:  # keep a proper rotation
        u[:, -1] = -u[:, -1]
        fixed = u @ vt
    return fixed


def parse_poses(text: str) -> list[Pose]:
    """Parse a pose file (one 3x4 row-major matrix per non-empty line)."""
    poses = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 12:
            raise PoseFormatError(f"line {lineno}: expected 12 numbers, got {len(tokens)}")
        try:
            vals = np.array([float(tok) for tok in tokens])
        except ValueError as exc:
            raise PoseFormatError(f"line {lineno}: {exc}") from exc
        mat = vals.reshape(3, 4)
        r, t = mat[:, :3], mat[:, 3]
        err = np.max(np.abs(r.T @ r - np.eye(3)))
        if err > 1e-3:
            raise PoseFormatError(f"line {lineno}: rotation is {err:.2e} from orthonormal")
        if err > 1e-6:
            r = _reorthonormalize(r)
        if np.linalg.det(r) < 0:
            raise PoseFormatError(f"line {lineno}: rotation is a reflection")
        poses.append(Pose(r, t))
    return poses


def read_poses(path) -> list[Pose]:
    with open(path) as f:
        return parse_poses(f.read())


def format_pose(pose: Pose) -> str:
    mat = np.hstack([pose.rotation, pose.translation.reshape(3, 1)])
    return " ".join(f"{v:.9f}" for v in mat.reshape(-1))


def to_world(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Transform sensor-frame points into the world frame (p -> R p + t)."""
    return PointCloud(cloud.points @ pose.rotation.T + pose.translation, cloud.frame_id)


def range_filter(cloud: PointCloud, origin: np.ndarray, r_max: float) -> PointCloud:
    """Keep points with ||p - origin|| <= r_max (closed bound)."""
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    o = np.asarray(origin, dtype=float).reshape(3)
    keep = np.linalg.norm(cloud.points - o, axis=1) <= r_max
    return PointCloud(cloud.points[keep], cloud.frame_id)


def split_frames(n_frames: int, sparsity: float) -> FrameSplit:
    """Deterministic periodic train/test split.

    Sparsity k/m (denominator <= 10) withholds the last k frames of every
    group of m as the test set, so training frames always lead each group.
    """
    if not 0.0 < sparsity < 1.0:
        raise ValueError(f"sparsity must be in (0, 1), got {sparsity}")
    frac = Fraction(sparsity).limit_denominator(10)
    k, m = frac.numerator, frac.denominator
    if k == 0 or k == m or abs(k / m - sparsity) > 5e-3:
        raise ValueError(f"sparsity {sparsity} is not expressible as k test frames per group of m <= 10")
    ids = np.arange(n_frames)
    is_test = (ids % m) >= (m - k)
    return FrameSplit(
        train_ids=[int(i) for i in ids[~is_test]],
        test_ids=[int(i) for i in ids[is_test]],
        sparsity=k / m,
    )


def write_ply(path, points: np.ndarray) -> None:
    """Write an ASCII PLY file with one x y z vertex per point."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {pts.shape[0]}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for p in pts:
            f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")


def read_ply(path) -> np.ndarray:
    with open(path) as f:
        lines = f.read().splitlines()
    try:
        end = lines.index("end_header")
    except ValueError as exc:
        raise ScanFormatError(f"{path}: missing PLY header terminator") from exc
    data = [[float(v) for v in ln.split()[:3]] for ln in lines[end + 1 :] if ln.strip()]
    return np.array(data, dtype=float).reshape(-1, 3)
