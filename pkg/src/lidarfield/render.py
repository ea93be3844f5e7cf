"""Quadrature-node generation and discrete volume rendering along rays.

Node sets are built by stratified sampling (optionally segmented so a fixed
fraction lands inside a ray's child interval), refined by inverse-CDF
importance sampling over the coarse weight profile, and composited into
per-sample termination weights. Rendered depth is the unnormalized weighted
sum of node depths; normalization happens only in two-step inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

#: floor added to coarse weights before inverse-CDF resampling, so the fine
#: pass stays defined when all weights vanish early in training
WEIGHT_FLOOR = 1e-5


@dataclass(frozen=True)
class SamplingConfig:
    n_coarse: int = 768
    n_fine: int = 1536
    lambda_in: float = 0.1

    def __post_init__(self):
        if self.n_coarse < 2:
            raise ValueError("n_coarse must be >= 2")
        if self.n_fine < 0:
            raise ValueError("n_fine must be >= 0")
        if not 0.0 <= self.lambda_in <= 1.0:
            raise ValueError("lambda_in must lie in [0, 1]")


@dataclass(frozen=True)
class RayBounds:
    """Integration bounds of one ray: parent interval plus optional child span.

    n_c/f_c are clipped into [t0, f_p] on construction. eps is the child
    inflation used by sampling and the free/depth losses; gamma widens the
    child depth-loss interval to smooth its transition against the free loss.
    """

    t0: float
    f_p: float
    n_c: float | None = None
    f_c: float | None = None
    eps: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not self.t0 <= self.f_p:
            raise ValueError(f"t0 {self.t0} exceeds far bound {self.f_p}")
        if self.eps < 0 or self.gamma < 0:
            raise ValueError("eps and gamma must be non-negative")
        if (self.n_c is None) != (self.f_c is None):
            raise ValueError("child near/far bounds must be given together")
        if self.n_c is not None:
            if self.n_c > self.f_c:
                raise ValueError("child near bound exceeds child far bound")
            object.__setattr__(self, "n_c", float(np.clip(self.n_c, self.t0, self.f_p)))
            object.__setattr__(self, "f_c", float(np.clip(self.f_c, self.t0, self.f_p)))

    @property
    def has_child(self) -> bool:
        return self.n_c is not None


@dataclass(frozen=True)
class RaySamples:
    """Sorted quadrature nodes with interval lengths, densities, and weights."""

    t: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    w: np.ndarray

    @classmethod
    def from_sigma(cls, t: np.ndarray, sigma: np.ndarray, upper: float) -> "RaySamples":
        t = np.asarray(t, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        delta = deltas_from_nodes(t[None, :], np.array([upper]))[0]
        w = compute_weights(sigma, delta)
        return cls(t, delta, sigma, w)


def deltas_from_nodes(t: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Interval lengths for (B, N) sorted nodes; last interval runs to `upper`."""
    last = np.maximum(upper - t[:, -1], 1e-12)
    return np.concatenate([np.diff(t, axis=1), last[:, None]], axis=1)


def stratified_nodes(rng: np.random.Generator, lo, hi, n: int) -> np.ndarray:
    """One uniform draw per equal-width stratum of [lo, hi]; rows are sorted."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.maximum(np.atleast_1d(np.asarray(hi, dtype=float)), lo + 1e-9)
    u = (np.arange(n) + rng.random((lo.shape[0], n))) / n
    return lo[:, None] + (hi - lo)[:, None] * u


def segmented_sample_batch(
    rng: np.random.Generator,
    t0: np.ndarray,
    f_p: np.ndarray,
    child_lo: np.ndarray,
    child_hi: np.ndarray,
    has_child: np.ndarray,
    n: int,
    lambda_in: float,
) -> np.ndarray:
    """Segmented stratified sampling for a batch of rays -> (B, n) sorted nodes.

    Rays with a child interval get ceil(lambda_in * n) nodes inside
    [child_lo, child_hi] and the rest across [t0, f_p]; rays without a child
    get all n nodes across [t0, f_p]. child_lo/child_hi are assumed clipped.
    """
    n_rays = t0.shape[0]
    out = np.empty((n_rays, n), dtype=float)
    plain = ~has_child
    if np.any(plain):
        out[plain] = stratified_nodes(rng, t0[plain], f_p[plain], n)
    if np.any(has_child):
        n_in = int(np.ceil(lambda_in * n))
        idx = has_child
        inside = stratified_nodes(rng, child_lo[idx], child_hi[idx], n_in)
        if n_in < n:
            outside = stratified_nodes(rng, t0[idx], f_p[idx], n - n_in)
            merged = np.concatenate([inside, outside], axis=1)
            merged.sort(axis=1)
        else:
            merged = inside
        out[idx] = merged
    return out


def segmented_sample(bounds: RayBounds, n: int, lambda_in: float, rng: np.random.Generator) -> np.ndarray:
    """Single-ray segmented sampling (see segmented_sample_batch)."""
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if bounds.has_child:
        lo = max(bounds.t0, bounds.n_c - bounds.eps)
        hi = min(bounds.f_p, bounds.f_c + bounds.eps)
        child_lo, child_hi, has = np.array([lo]), np.array([hi]), np.array([True])
    else:
        child_lo, child_hi, has = np.zeros(1), np.zeros(1), np.array([False])
    nodes = segmented_sample_batch(
        rng, np.array([bounds.t0]), np.array([bounds.f_p]), child_lo, child_hi, has, n, lambda_in
    )
    return nodes[0]


def fine_sample_batch(
    rng: np.random.Generator,
    t_coarse: np.ndarray,
    w_coarse: np.ndarray,
    upper: np.ndarray,
    n_fine: int,
    floor: float = WEIGHT_FLOOR,
) -> np.ndarray:
    """Inverse-CDF draws over coarse bins with mass proportional to w + floor.

    Bin i spans [t_i, t_{i+1}); the last bin runs to `upper`. Returns
    (B, n_fine) nodes (unsorted merge is up to the caller).
    """
    n_rays, n_bins = t_coarse.shape
    edges_hi = np.concatenate([t_coarse[:, 1:], upper[:, None]], axis=1)
    mass = np.maximum(w_coarse, 0.0) + floor
    cdf = np.cumsum(mass, axis=1)
    total = cdf[:, -1:]
    cdf = cdf / total

    u = (np.arange(n_fine) + rng.random((n_rays, n_fine))) / n_fine
    # row-offset trick: searchsorted over all rows in one flat call
    shift = np.arange(n_rays)[:, None].astype(float)
    flat_idx = np.searchsorted((cdf + shift).ravel(), (u + shift).ravel(), side="right")
    bins = np.clip(flat_idx.reshape(n_rays, n_fine) - np.arange(n_rays)[:, None] * n_bins, 0, n_bins - 1)

    cdf_lo = np.concatenate([np.zeros((n_rays, 1)), cdf[:, :-1]], axis=1)
    take = lambda a: np.take_along_axis(a, bins, axis=1)
    p_bin = np.maximum(take(cdf) - take(cdf_lo), 1e-15)
    frac = (u - take(cdf_lo)) / p_bin
    return take(t_coarse) + frac * (take(edges_hi) - take(t_coarse))


def hierarchical_fine_sample(
    t_coarse: np.ndarray,
    w_coarse: np.ndarray,
    n_fine: int,
    rng: np.random.Generator,
    upper: float | None = None,
) -> np.ndarray:
    """Single-ray fine pass: importance draws merged with the coarse nodes."""
    t_coarse = np.asarray(t_coarse, dtype=float)
    up = float(t_coarse[-1]) if upper is None else float(upper)
    if n_fine == 0:
        return t_coarse.copy()
    fine = fine_sample_batch(
        rng, t_coarse[None, :], np.asarray(w_coarse, float)[None, :], np.array([up]), n_fine
    )[0]
    merged = np.concatenate([t_coarse, fine])
    merged.sort()
    return merged


def compute_weights(sigma: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Alpha-composited termination weights (scalar or batch)."""
    sigma = np.asarray(sigma, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("densities must be non-negative")
    if np.any(delta <= 0):
        raise ValueError("interval lengths must be positive")
    w, _ = kernels.alpha_composite(sigma, delta)
    return w


def batch_render_depth(t: np.ndarray, w: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Unnormalized rendered depth over closed per-ray intervals [lo, hi]."""
    mask = (t >= lo[:, None]) & (t <= hi[:, None])
    return np.sum(np.where(mask, w * t, 0.0), axis=1)


def batch_integrate_weight(t: np.ndarray, w: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    mask = (t >= lo[:, None]) & (t <= hi[:, None])
    return np.sum(np.where(mask, w, 0.0), axis=1)


def render_depth(samples: RaySamples, over: tuple[float, float]) -> float:
    """Sum of w_i * t_i over nodes inside the closed interval `over`."""
    a, b = over
    return float(batch_render_depth(samples.t[None, :], samples.w[None, :], np.array([a]), np.array([b]))[0])


def integrate_weight(samples: RaySamples, over: tuple[float, float]) -> float:
    """Sum of w_i over nodes inside the closed interval `over`."""
    a, b = over
    return float(
        batch_integrate_weight(samples.t[None, :], samples.w[None, :], np.array([a]), np.array([b]))[0]
    )
