"""Axis-aligned box primitives and ray/box intersection tests.

The slab test follows the classic branchless formulation: zero direction
components produce infinite slab bounds via IEEE-754 conventions, handled
explicitly so 0 * inf never leaks a NaN into the comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box given by two opposite corners (min <= max per axis)."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float).reshape(3)
        hi = np.asarray(self.max_corner, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box corners must be finite")
        if np.any(lo > hi):
            raise ValueError(f"min corner {lo} exceeds max corner {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @classmethod
    def of_points(cls, points: np.ndarray) -> "Aabb":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise ValueError("cannot bound an empty point set")
        return cls(pts.min(axis=0), pts.max(axis=0))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-bound containment mask for an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.all((pts >= self.min_corner) & (pts <= self.max_corner), axis=1)

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(
            np.minimum(self.min_corner, other.min_corner),
            np.maximum(self.max_corner, other.max_corner),
        )

    def clipped_to(self, outer: "Aabb") -> "Aabb":
        return Aabb(
            np.clip(self.min_corner, outer.min_corner, outer.max_corner),
            np.clip(self.max_corner, outer.min_corner, outer.max_corner),
        )


@dataclass(frozen=True)
class RayInterval:
    """Parametric span [t_enter, t_exit] of a forward ray inside a box."""

    t_enter: float
    t_exit: float

    def __post_init__(self):
        if not (0.0 <= self.t_enter <= self.t_exit):
            raise ValueError(f"bad interval [{self.t_enter}, {self.t_exit}]")


def iou(a: Aabb, b: Aabb) -> float:
    """Intersection-over-union volume of two boxes (0 when disjoint)."""
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    if np.any(hi <= lo):
        return 0.0
    inter = float(np.prod(hi - lo))
    return inter / (a.volume + b.volume - inter)


def inflate(box: Aabb, step: float) -> Aabb:
    """Grow a box by `step` meters on every face. step must be >= 0."""
    if step < 0:
        raise ValueError("inflation step must be non-negative")
    return Aabb(box.min_corner - step, box.max_corner + step)


def batch_ray_aabb(
    origins: np.ndarray,
    dirs: np.ndarray,
    box_min: np.ndarray,
    box_max: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test of R rays against C boxes.

    origins, dirs: (R, 3); box_min, box_max: (C, 3).
    Returns (t_enter, t_exit, hit), each (R, C). t_enter is clamped to 0 for
    origins inside a box; misses leave t_enter/t_exit unspecified.
    """
    o = np.asarray(origins, dtype=float).reshape(-1, 1, 3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 1, 3)
    lo = np.asarray(box_min, dtype=float).reshape(1, -1, 3)
    hi = np.asarray(box_max, dtype=float).reshape(1, -1, 3)

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    para = d == 0.0  # parallel to this slab: inside -> unconstrained, else miss
    inside = (o >= lo) & (o <= hi)
    axis_lo = np.where(para, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    axis_hi = np.where(para, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))

    t_enter = axis_lo.max(axis=2)
    t_exit = axis_hi.min(axis=2)
    hit = (t_enter <= t_exit) & (t_exit >= 0.0)
    t_enter = np.maximum(t_enter, 0.0)
    return t_enter, t_exit, hit


def ray_aabb_intersect(origin: np.ndarray, dir: np.ndarray, box: Aabb) -> RayInterval | None:
    """Forward-ray / box slab test; None when the ray misses the box."""
    d = np.asarray(dir, dtype=float).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    t_enter, t_exit, hit = batch_ray_aabb(
        np.asarray(origin, float).reshape(1, 3),
        d.reshape(1, 3),
        box.min_corner.reshape(1, 3),
        box.max_corner.reshape(1, 3),
    )
    if not hit[0, 0]:
        return None
    return RayInterval(float(t_enter[0, 0]), float(t_exit[0, 0]))


def batch_sphere_prefilter(
    origins: np.ndarray,
    dirs: np.ndarray,
    box_min: np.ndarray,
    box_max: np.ndarray,
) -> np.ndarray:
    """True where the forward ray passes within each box's outer sphere.

    A superset of the slab test: cheap rejection before exact intersection.
    Shapes as in batch_ray_aabb; returns (R, C) bool.
    """
    o = np.asarray(origins, dtype=float).reshape(-1, 1, 3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 1, 3)
    lo = np.asarray(box_min, dtype=float).reshape(1, -1, 3)
    hi = np.asarray(box_max, dtype=float).reshape(1, -1, 3)

    center = 0.5 * (lo + hi)
    radius = 0.5 * np.linalg.norm(hi - lo, axis=2)
    rel = center - o
    t_closest = np.maximum(np.einsum("rcx,rcx->rc", rel, np.broadcast_to(d, rel.shape)), 0.0)
    closest = t_closest[..., None] * d - rel
    return np.linalg.norm(closest, axis=2) <= radius


def sphere_prefilter(origin: np.ndarray, dir: np.ndarray, box: Aabb) -> bool:
    d = np.asarray(dir, dtype=float).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    mask = batch_sphere_prefilter(
        np.asarray(origin, float).reshape(1, 3),
        d.reshape(1, 3),
        box.min_corner.reshape(1, 3),
        box.max_corner.reshape(1, 3),
    )
    return bool(mask[0, 0])
