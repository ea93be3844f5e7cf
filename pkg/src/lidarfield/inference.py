"""One-step and segment-refined two-step depth inference.

One-step renders the unnormalized depth over the whole parent interval.
Two-step first finds the child regions a ray could hit (sphere prefilter,
slab test, bounded inflation retries when nothing hits), samples the ray so
candidate intervals are resolved, selects a single child by peak weight or by
maximum weight integral, then returns the normalized weighted-mean depth
within that child's interval. Rays whose best candidate carries almost no
weight produce no depth and are reported as invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .field import softplus
from .geometry import Aabb, RayInterval, batch_ray_aabb, batch_sphere_prefilter
from .io import PointCloud, Pose
from .partition import ChildRegion
from .render import (
    RayBounds,
    RaySamples,
    SamplingConfig,
    deltas_from_nodes,
    fine_sample_batch,
    integrate_weight,
    segmented_sample_batch,
    stratified_nodes,
)

ONE_STEP = "one-step"
TWO_STEP = "two-step"


@dataclass(frozen=True)
class InferenceParams:
    w_min: float = 0.05
    inflate_step: float = 0.2
    max_retries: int = 3
    eps: float = 0.1  # reuse of the training-time child inflation

    def __post_init__(self):
        if self.w_min <= 0:
            raise ValueError("w_min must be positive")
        if self.inflate_step < 0 or self.max_retries < 0:
            raise ValueError("inflate_step and max_retries must be non-negative")


@dataclass(frozen=True)
class DepthPrediction:
    depth: float | None
    selected_child: int | None
    weight_integral: float
    method: str


def _density_grid(model, origins, dirs, t, chunk: int = 262144) -> np.ndarray:
    """Field density at o + t*d for (B, N) node grids."""
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    flat = pts.reshape(-1, 3)
    out = np.empty(flat.shape[0])
    for i in range(0, flat.shape[0], chunk):
        out[i : i + chunk] = np.asarray(model.density(flat[i : i + chunk]), dtype=float)
    return out.reshape(t.shape)


def render_pass(model, origins, dirs, t_coarse, f_p, sampling: SamplingConfig, rng):
    """Coarse + hierarchical fine pass -> merged (t, delta, w) arrays."""
    sigma_c = _density_grid(model, origins, dirs, t_coarse)
    delta_c = deltas_from_nodes(t_coarse, f_p)
    w_c, _ = kernels.alpha_composite(sigma_c, delta_c)
    if sampling.n_fine > 0:
        t_fine = fine_sample_batch(rng, t_coarse, w_c, f_p, sampling.n_fine)
        t = np.concatenate([t_coarse, t_fine], axis=1)
        t.sort(axis=1)
    else:
        t = t_coarse
    delta = deltas_from_nodes(t, f_p)
    sigma = _density_grid(model, origins, dirs, t)
    w, _ = kernels.alpha_composite(sigma, delta)
    return t, delta, sigma, w


def one_step_depth(
    model,
    origin: np.ndarray,
    dir: np.ndarray,
    bounds: RayBounds,
    sampling: SamplingConfig,
    rng: np.random.Generator,
) -> DepthPrediction:
    """Unnormalized rendered depth over [t0, f_p]; always yields a value."""
    o = np.asarray(origin, dtype=float).reshape(1, 3)
    d = np.asarray(dir, dtype=float).reshape(1, 3)
    t_coarse = stratified_nodes(rng, np.array([bounds.t0]), np.array([bounds.f_p]), sampling.n_coarse)
    t, _, _, w = render_pass(model, o, d, t_coarse, np.array([bounds.f_p]), sampling, rng)
    mask = (t[0] >= bounds.t0) & (t[0] <= bounds.f_p)
    depth = float(np.sum(w[0][mask] * t[0][mask]))
    return DepthPrediction(depth, None, float(np.sum(w[0][mask])), ONE_STEP)


def find_candidates(
    origin: np.ndarray,
    dir: np.ndarray,
    children: list[ChildRegion],
    inflate_step: float = 0.2,
    max_retries: int = 3,
) -> list[tuple[int, RayInterval]]:
    """Children whose box the forward ray enters, sorted by entry distance.

    When nothing hits, every child box is inflated in increments of
    inflate_step (up to max_retries times) and the search repeats; an empty
    result after all retries is a valid outcome.
    """
    if not children:
        return []
    o = np.asarray(origin, dtype=float).reshape(1, 3)
    d = np.asarray(dir, dtype=float).reshape(1, 3)
    lo = np.stack([c.box.min_corner for c in children])
    hi = np.stack([c.box.max_corner for c in children])
    for attempt in range(max_retries + 1):
        grow = attempt * inflate_step
        lo_a, hi_a = lo - grow, hi + grow
        rough = batch_sphere_prefilter(o, d, lo_a, hi_a)[0]
        if np.any(rough):
            sub = np.nonzero(rough)[0]
            t_enter, t_exit, hit = batch_ray_aabb(o, d, lo_a[sub], hi_a[sub])
            found = [
                (int(children[sub[j]].segment_id), RayInterval(float(t_enter[0, j]), float(t_exit[0, j])))
                for j in range(sub.size)
                if hit[0, j]
            ]
            if found:
                found.sort(key=lambda item: (item[1].t_enter, item[0]))
                return found
    return []


def select_child(
    candidates: list[tuple[int, RayInterval]],
    samples: RaySamples,
    w_min: float,
) -> tuple[int, RayInterval] | None:
    """Pick the one child interval a depth should be inferred in.

    A single candidate is taken directly; among several, the one containing
    the peak-weight node wins, falling back to the largest weight integral.
    Ties break toward the nearer candidate. Returns None when the chosen
    candidate integrates less than w_min weight.
    """
    if not candidates:
        return None
    ordered = sorted(candidates, key=lambda item: (item[1].t_enter, item[0]))
    integrals = [integrate_weight(samples, (c[1].t_enter, c[1].t_exit)) for c in ordered]
    if len(ordered) == 1:
        pick = 0
    else:
        t_peak = float(samples.t[int(np.argmax(samples.w))])
        containing = [
            i for i, c in enumerate(ordered) if c[1].t_enter <= t_peak <= c[1].t_exit
        ]
        if containing:
            pick = containing[0]
        else:
            pick = int(np.argmax(integrals))
    if integrals[pick] < w_min:
        return None
    return ordered[pick]


def two_step_depth(
    model,
    origin: np.ndarray,
    dir: np.ndarray,
    children: list[ChildRegion],
    parent_box: Aabb,
    sampling: SamplingConfig,
    params: InferenceParams,
    rng: np.random.Generator,
) -> DepthPrediction:
    """Normalized weighted-mean depth inside the selected child interval."""
    o = np.asarray(origin, dtype=float).reshape(3)
    d = np.asarray(dir, dtype=float).reshape(3)
    t_enter, t_exit, hit = batch_ray_aabb(
        o[None, :], d[None, :], parent_box.min_corner[None, :], parent_box.max_corner[None, :]
    )
    if not hit[0, 0]:
        return DepthPrediction(None, None, 0.0, TWO_STEP)
    f_p = float(t_exit[0, 0])
    candidates = find_candidates(o, d, children, params.inflate_step, params.max_retries)
    t, delta, sigma, w = _candidate_pass(
        model, o[None, :], d[None, :], np.array([f_p]), [candidates], sampling, params, rng
    )
    samples = RaySamples(t[0], delta[0], sigma[0], w[0])
    return _finish_two_step(candidates, samples, params.w_min)


def _finish_two_step(candidates, samples: RaySamples, w_min: float) -> DepthPrediction:
    sel = select_child(candidates, samples, w_min)
    if sel is None:
        best = 0.0
        if candidates:
            best = max(integrate_weight(samples, (c[1].t_enter, c[1].t_exit)) for c in candidates)
        return DepthPrediction(None, None, best, TWO_STEP)
    seg_id, interval = sel
    mask = (samples.t >= interval.t_enter) & (samples.t <= interval.t_exit)
    w_int = float(np.sum(samples.w[mask]))
    depth = float(np.sum(samples.w[mask] * samples.t[mask]) / w_int)
    return DepthPrediction(depth, seg_id, w_int, TWO_STEP)


def _candidate_pass(model, origins, dirs, f_p, candidate_lists, sampling, params, rng):
    """Segmented sampling over candidate-interval unions, then render_pass.

    The in-child node budget ceil(lambda_in * n_coarse) splits as evenly as
    possible across each ray's candidates (sampling intervals inflated by the
    training eps and clipped to the parent interval).
    """
    n_rays = origins.shape[0]
    n = sampling.n_coarse
    n_in_total = int(np.ceil(sampling.lambda_in * n))
    t0 = np.zeros(n_rays)
    chunks = []
    for r in range(n_rays):
        cands = candidate_lists[r]
        if not cands or n_in_total == 0:
            chunks.append(stratified_nodes(rng, t0[r : r + 1], f_p[r : r + 1], n)[0])
            continue
        counts = np.full(len(cands), n_in_total // len(cands))
        counts[: n_in_total % len(cands)] += 1
        counts = counts[counts > 0]
        parts = []
        for (seg, interval), cnt in zip(cands, counts):
            lo = max(0.0, interval.t_enter - params.eps)
            hi = min(f_p[r], interval.t_exit + params.eps)
            parts.append(stratified_nodes(rng, np.array([lo]), np.array([hi]), int(cnt))[0])
        n_out = n - int(counts.sum())
        if n_out > 0:
            parts.append(stratified_nodes(rng, t0[r : r + 1], f_p[r : r + 1], n_out)[0])
        merged = np.concatenate(parts)
        merged.sort()
        chunks.append(merged)
    t_coarse = np.stack(chunks)
    return render_pass(model, origins, dirs, t_coarse, f_p, sampling, rng)


def predict_frame(
    model,
    pose: Pose,
    dirs_sensor: np.ndarray,
    children: list[ChildRegion],
    parent_box: Aabb,
    sampling: SamplingConfig,
    params: InferenceParams,
    rng: np.random.Generator,
    method: str = TWO_STEP,
    ray_chunk: int = 512,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-ray depths for one frame; NaN marks invalid rays.

    Returns (depths, weight_integrals). Directions are given in the sensor
    frame (taken from the matching real scan when evaluating).
    """
    dirs = np.asarray(dirs_sensor, dtype=float).reshape(-1, 3) @ pose.rotation.T
    n = dirs.shape[0]
    origins = np.broadcast_to(pose.translation, (n, 3))
    depths = np.full(n, np.nan)
    weights = np.zeros(n)

    t_enter, t_exit, hit = batch_ray_aabb(
        origins, dirs, parent_box.min_corner[None, :], parent_box.max_corner[None, :]
    )
    ok = hit[:, 0]
    f_p_all = np.where(ok, t_exit[:, 0], 0.0)

    if method == ONE_STEP:
        idx_all = np.nonzero(ok)[0]
        for lo in range(0, idx_all.size, ray_chunk):
            idx = idx_all[lo : lo + ray_chunk]
            f_p = f_p_all[idx]
            t_coarse = stratified_nodes(rng, np.zeros(idx.size), f_p, sampling.n_coarse)
            t, _, _, w = render_pass(model, origins[idx], dirs[idx], t_coarse, f_p, sampling, rng)
            depths[idx] = np.sum(w * t, axis=1)
            weights[idx] = np.sum(w, axis=1)
        return depths, weights

    if method != TWO_STEP:
        raise ValueError(f"unknown inference method {method!r}")

    lo_boxes = np.stack([c.box.min_corner for c in children]) if children else np.zeros((0, 3))
    hi_boxes = np.stack([c.box.max_corner for c in children]) if children else np.zeros((0, 3))
    idx_all = np.nonzero(ok)[0]
    for start in range(0, idx_all.size, ray_chunk):
        idx = idx_all[start : start + ray_chunk]
        cand_lists = []
        if children:
            e1, e2, h = batch_ray_aabb(origins[idx], dirs[idx], lo_boxes, hi_boxes)
            for j in range(idx.size):
                hits = np.nonzero(h[j])[0]
                cands = [
                    (int(children[c].segment_id), RayInterval(float(e1[j, c]), float(e2[j, c])))
                    for c in hits
                ]
                if cands:
                    cands.sort(key=lambda item: (item[1].t_enter, item[0]))
                else:
                    cands = find_candidates(
                        origins[idx[j]], dirs[idx[j]], children, params.inflate_step, params.max_retries
                    )
                cand_lists.append(cands)
        else:
            cand_lists = [[] for _ in range(idx.size)]
        f_p = f_p_all[idx]
        t, delta, sigma, w = _candidate_pass(
            model, origins[idx], dirs[idx], f_p, cand_lists, sampling, params, rng
        )
        for j in range(idx.size):
            samples = RaySamples(t[j], delta[j], sigma[j], w[j])
            pred = _finish_two_step(cand_lists[j], samples, params.w_min)
            weights[idx[j]] = pred.weight_integral
            if pred.depth is not None:
                depths[idx[j]] = pred.depth
    return depths, weights


def synthesize_view(
    model,
    pose: Pose,
    ray_pattern: np.ndarray,
    children: list[ChildRegion],
    parent_box: Aabb,
    sampling: SamplingConfig,
    params: InferenceParams,
    rng: np.random.Generator,
    method: str = TWO_STEP,
) -> tuple[PointCloud, dict]:
    """Predict one point per beam direction; invalid rays are dropped.

    Returns the synthesized world-frame cloud plus {"valid": n, "invalid": m}.
    """
    depths, _ = predict_frame(
        model, pose, ray_pattern, children, parent_box, sampling, params, rng, method
    )
    dirs_world = np.asarray(ray_pattern, dtype=float).reshape(-1, 3) @ pose.rotation.T
    valid = np.isfinite(depths)
    pts = pose.translation + depths[valid, None] * dirs_world[valid]
    stats = {"valid": int(valid.sum()), "invalid": int((~valid).sum())}
    return PointCloud(pts), stats
