"""Analytic scene description and spinning-LiDAR scan synthesis.

A scene file lists opaque axis-aligned primitives and a sensor trajectory,
one record per line:

    plane <axis> <offset>          # infinite plane, axis in {x, y, z}
    box <x0> <y0> <z0> <x1> <y1> <z1>
    waypoint <x> <y> <z>           # polyline the sensor moves along

Beams are exact ray/primitive intersections, so generated scans double as a
ground-truth oracle in tests. Sensor yaw follows the trajectory heading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SceneFormatError
from .geometry import Aabb
from .io import Pose

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class Scene:
    boxes: list[Aabb]
    planes: list[tuple[int, float]]  # (axis index, offset)
    waypoints: np.ndarray  # (W, 3)


@dataclass(frozen=True)
class BeamPattern:
    azimuth_steps: int = 100
    elevation_steps: int = 64
    vfov_deg: tuple[float, float] = (-25.0, 5.0)
    max_range: float = 120.0

    def __post_init__(self):
        if self.azimuth_steps < 1 or self.elevation_steps < 1:
            raise ValueError("beam pattern needs at least one beam per axis")
        if self.vfov_deg[0] > self.vfov_deg[1]:
            raise ValueError("vertical field of view is inverted")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


def parse_scene(text: str) -> Scene:
    boxes, planes, waypoints = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind, args = tokens[0], tokens[1:]
        try:
            if kind == "plane":
                if len(args) != 2 or args[0] not in _AXES:
                    raise ValueError("expected: plane <x|y|z> <offset>")
                planes.append((_AXES[args[0]], float(args[1])))
            elif kind == "box":
                if len(args) != 6:
                    raise ValueError("expected: box <x0> <y0> <z0> <x1> <y1> <z1>")
                vals = [float(v) for v in args]
                boxes.append(Aabb(vals[:3], vals[3:]))
            elif kind == "waypoint":
                if len(args) != 3:
                    raise ValueError("expected: waypoint <x> <y> <z>")
                waypoints.append([float(v) for v in args])
            else:
                raise ValueError(f"unknown record {kind!r}")
        except ValueError as exc:
            raise SceneFormatError(f"scene line {lineno}: {exc}") from exc
    if not waypoints:
        raise SceneFormatError("scene defines no trajectory waypoints")
    if not boxes and not planes:
        raise SceneFormatError("scene defines no geometry")
    return Scene(boxes, planes, np.asarray(waypoints, dtype=float))


def read_scene(path) -> Scene:
    with open(path) as f:
        return parse_scene(f.read())


def beam_dirs(pattern: BeamPattern) -> np.ndarray:
    """Sensor-frame unit directions on the azimuth x elevation grid."""
    az = np.linspace(0.0, 2.0 * np.pi, pattern.azimuth_steps, endpoint=False)
    lo, hi = np.deg2rad(pattern.vfov_deg)
    if pattern.elevation_steps == 1:
        el = np.array([0.5 * (lo + hi)])
    else:
        el = np.linspace(lo, hi, pattern.elevation_steps)
    az_g, el_g = np.meshgrid(az, el, indexing="ij")
    cos_el = np.cos(el_g)
    dirs = np.stack([cos_el * np.cos(az_g), cos_el * np.sin(az_g), np.sin(el_g)], axis=-1)
    return dirs.reshape(-1, 3)


def trace_rays(scene: Scene, origin: np.ndarray, dirs: np.ndarray, max_range: float) -> np.ndarray:
    """First-hit distances for (K, 3) world rays; NaN where nothing is hit.

    Planes hit at their single crossing; boxes hit at their entry face, or at
    the exit face when the origin is inside (interior surface).
    """
    o = np.asarray(origin, dtype=float).reshape(3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    best = np.full(d.shape[0], np.inf)

    for axis, offset in scene.planes:
        da = d[:, axis]
        with np.errstate(divide="ignore"):
            t = (offset - o[axis]) / da
        valid = (da != 0.0) & (t > 1e-9)
        best = np.where(valid & (t < best), t, best)

    for box in scene.boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (box.min_corner - o) * inv
            t2 = (box.max_corner - o) * inv
        para = d == 0.0
        inside = (o >= box.min_corner) & (o <= box.max_corner)
        axis_lo = np.where(para, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        axis_hi = np.where(para, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        t_enter = axis_lo.max(axis=1)
        t_exit = axis_hi.min(axis=1)
        hit = (t_enter <= t_exit) & (t_exit > 1e-9)
        t_hit = np.where(t_enter > 1e-9, t_enter, t_exit)  # inside -> interior face
        best = np.where(hit & (t_hit < best), t_hit, best)

    best = np.where(best <= max_range, best, np.nan)
    return best


def poses_along(waypoints: np.ndarray, n_frames: int) -> list[Pose]:
    """Arc-length uniform poses along the waypoint polyline, yaw = heading."""
    wp = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if wp.shape[0] == 1:
        return [Pose(np.eye(3), wp[0])] * n_frames
    seg = np.diff(wp, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    poses = []
    stations = np.linspace(0.0, total, n_frames) if n_frames > 1 else np.array([0.0])
    for s in stations:
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, seg.shape[0] - 1)
        i = max(i, 0)
        frac = 0.0 if seg_len[i] == 0 else (s - cum[i]) / seg_len[i]
        pos = wp[i] + frac * seg[i]
        heading = seg[i]
        yaw = float(np.arctan2(heading[1], heading[0])) if np.linalg.norm(heading[:2]) > 0 else 0.0
        c, s_ = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s_, 0.0], [s_, c, 0.0], [0.0, 0.0, 1.0]])
        poses.append(Pose(rot, pos))
    return poses


def simulate_scans(
    scene: Scene, pattern: BeamPattern, n_frames: int
) -> tuple[list[np.ndarray], list[Pose]]:
    """Exact scans along the trajectory.

    Returns per-frame (K_i, 4) float32 sensor-frame records (x, y, z,
    intensity=1); beams that miss all geometry are omitted.
    """
    dirs_sensor = beam_dirs(pattern)
    poses = poses_along(scene.waypoints, n_frames)
    scans = []
    for pose in poses:
        dirs_world = dirs_sensor @ pose.rotation.T
        depths = trace_rays(scene, pose.translation, dirs_world, pattern.max_range)
        valid = np.isfinite(depths)
        pts_sensor = depths[valid, None] * dirs_sensor[valid]
        records = np.concatenate(
            [pts_sensor, np.ones((pts_sensor.shape[0], 1))], axis=1
        ).astype("<f4")
        scans.append(records)
    return scans, poses
