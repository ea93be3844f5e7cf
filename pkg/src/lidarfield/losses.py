"""Depth-supervision losses over composited ray samples.

Three terms act on each training ray: a scene-level depth loss over the full
parent interval, a free-space penalty on squared weights outside the (slightly
inflated) child interval, and a segment-level depth loss over the child
interval widened by a transition margin. Rays without an owning child carry
only the scene-level term. Batch losses average over rays so the weighting
coefficients keep their meaning across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .render import RayBounds, RaySamples, batch_render_depth

TURNING_POINT = 0.1  # meters; quadratic/linear switch of the scaled smooth-L1


@dataclass(frozen=True)
class LossWeights:
    lambda_pd: float = 1.0
    lambda_cf: float = 1.0e6
    lambda_cd: float = 1.0e5
    lambda_in: float = 0.1
    eps: float = 0.1
    gamma: float = 2.0

    def __post_init__(self):
        for name in ("lambda_pd", "lambda_cf", "lambda_cd", "eps", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.lambda_in <= 1.0:
            raise ValueError("lambda_in must lie in [0, 1]")


def smooth_l1_prime(x, y):
    """Smooth-L1 with the quadratic/linear turning point moved to 0.1 m.

    Equals 0.1 * SmoothL1(10x, 10y): 5 d^2 below the turning point, d - 0.05
    above it, continuous and C1 at d = 0.1.
    """
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    out = np.where(d < TURNING_POINT, 5.0 * d * d, d - 0.05)
    return float(out) if out.ndim == 0 else out


def smooth_l1_prime_ddx(x, y):
    """d/dx of smooth_l1_prime."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    out = np.where(np.abs(diff) < TURNING_POINT, 10.0 * diff, np.sign(diff))
    return float(out) if out.ndim == 0 else out


class BatchBounds:
    """Per-ray integration bounds as flat arrays (nan child bounds = no child)."""

    def __init__(self, t0, f_p, n_c, f_c, eps: float, gamma: float):
        self.t0 = np.asarray(t0, dtype=float)
        self.f_p = np.asarray(f_p, dtype=float)
        self.n_c = np.asarray(n_c, dtype=float)
        self.f_c = np.asarray(f_c, dtype=float)
        self.eps = float(eps)
        self.gamma = float(gamma)
        self.has_child = np.isfinite(self.n_c) & np.isfinite(self.f_c)

    @classmethod
    def single(cls, b: RayBounds) -> "BatchBounds":
        n_c = b.n_c if b.has_child else np.nan
        f_c = b.f_c if b.has_child else np.nan
        return cls([b.t0], [b.f_p], [n_c], [f_c], b.eps, b.gamma)

    def child_sample_interval(self):
        """Inflated child span clipped to the parent interval (for sampling)."""
        lo = np.clip(self.n_c - self.eps, self.t0, self.f_p)
        hi = np.clip(self.f_c + self.eps, self.t0, self.f_p)
        return np.where(self.has_child, lo, 0.0), np.where(self.has_child, hi, 0.0)


def batch_loss_terms(
    t: np.ndarray,
    delta: np.ndarray,
    w: np.ndarray,
    bounds: BatchBounds,
    depth_meas: np.ndarray,
    want_grad: bool = False,
):
    """Per-ray loss components over (B, N) composited samples.

    Returns (pd, cf, cd) arrays of shape (B,); cf/cd are zero for rays without
    a child. With want_grad=True additionally returns (dpd, dcf, dcd) as
    (B, N) gradients with respect to the weights.
    """
    parent_mask = (t >= bounds.t0[:, None]) & (t <= bounds.f_p[:, None])
    d_parent = np.sum(np.where(parent_mask, w * t, 0.0), axis=1)
    pd = smooth_l1_prime(d_parent, depth_meas)

    has = bounds.has_child
    n_lo = np.where(has, bounds.n_c - bounds.eps, -np.inf)
    f_hi = np.where(has, bounds.f_c + bounds.eps, np.inf)
    free_mask = has[:, None] & ((t <= n_lo[:, None]) | (t >= f_hi[:, None]))
    cf = np.sum(np.where(free_mask, w * w * delta, 0.0), axis=1)

    c_lo = np.maximum(bounds.t0, n_lo - bounds.gamma)
    c_hi = np.minimum(bounds.f_p, f_hi + bounds.gamma)
    child_mask = has[:, None] & (t >= c_lo[:, None]) & (t <= c_hi[:, None])
    d_child = np.sum(np.where(child_mask, w * t, 0.0), axis=1)
    cd = np.where(has, smooth_l1_prime(d_child, depth_meas), 0.0)

    if not want_grad:
        return pd, cf, cd

    dpd = smooth_l1_prime_ddx(d_parent, depth_meas)[:, None] * np.where(parent_mask, t, 0.0)
    dcf = np.where(free_mask, 2.0 * w * delta, 0.0)
    dcd_scale = np.where(has, smooth_l1_prime_ddx(d_child, depth_meas), 0.0)
    dcd = dcd_scale[:, None] * np.where(child_mask, t, 0.0)
    return (pd, cf, cd), (dpd, dcf, dcd)


def batch_total_loss(t, delta, w, bounds: BatchBounds, depth_meas, lw: LossWeights, want_grad=False):
    """Batch-mean total loss; optionally also dL/dw for the mean."""
    if not want_grad:
        pd, cf, cd = batch_loss_terms(t, delta, w, bounds, depth_meas)
    else:
        (pd, cf, cd), (dpd, dcf, dcd) = batch_loss_terms(t, delta, w, bounds, depth_meas, True)
    has = bounds.has_child
    per_ray = lw.lambda_pd * pd + np.where(has, lw.lambda_cf * cf + lw.lambda_cd * cd, 0.0)
    n = per_ray.shape[0]
    parts = {
        "total": float(per_ray.mean()),
        "parent_depth": float(pd.mean()),
        "child_free": float(cf.mean()),
        "child_depth": float(cd.mean()),
    }
    if not want_grad:
        return parts
    dw = lw.lambda_pd * dpd + has[:, None] * (lw.lambda_cf * dcf + lw.lambda_cd * dcd)
    return parts, dw / n


def parent_depth_loss(samples: RaySamples, bounds: RayBounds, depth_meas: float) -> float:
    """Scene-level loss: rendered depth over [t0, f_p] against the measurement."""
    bb = BatchBounds.single(bounds)
    pd, _, _ = batch_loss_terms(
        samples.t[None, :], samples.delta[None, :], samples.w[None, :], bb, np.array([depth_meas])
    )
    return float(pd[0])


def child_free_loss(samples: RaySamples, bounds: RayBounds) -> float:
    """Squared-weight quadrature over the two free segments around the child."""
    if not bounds.has_child:
        raise ValueError("child_free_loss requires a child interval")
    bb = BatchBounds.single(bounds)
    _, cf, _ = batch_loss_terms(
        samples.t[None, :], samples.delta[None, :], samples.w[None, :], bb, np.array([0.0])
    )
    return float(cf[0])


def child_depth_loss(samples: RaySamples, bounds: RayBounds, depth_meas: float) -> float:
    """Segment-level loss over the child interval widened by eps + gamma."""
    if not bounds.has_child:
        raise ValueError("child_depth_loss requires a child interval")
    bb = BatchBounds.single(bounds)
    _, _, cd = batch_loss_terms(
        samples.t[None, :], samples.delta[None, :], samples.w[None, :], bb, np.array([depth_meas])
    )
    return float(cd[0])


def total_loss(ray, samples: RaySamples, bounds: RayBounds, lw: LossWeights) -> float:
    """Weighted sum of the three terms; parent term only when the ray owns no child."""
    pd = parent_depth_loss(samples, bounds, ray.depth)
    if ray.child_id is None or not bounds.has_child:
        return lw.lambda_pd * pd
    cf = child_free_loss(samples, bounds)
    cd = child_depth_loss(samples, bounds, ray.depth)
    return lw.lambda_pd * pd + lw.lambda_cf * cf + lw.lambda_cd * cd
