"""Epoch loop: sample, composite, compute losses, backpropagate, Adam-update.

Each optimizer step draws a shuffled ray batch, builds segmented coarse nodes
plus an importance-sampled fine pass, and evaluates the loss on the merged
node set. Gradients flow analytically: d(loss)/d(weights) from the loss
masks, through the compositing recurrence (no divisions, stable for opaque
samples), through softplus, then layer by layer through the MLP.
"""

from __future__ import annotations

import json
import time
import zipfile
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .errors import CheckpointError, TrainingError
from .field import (
    FieldConfig,
    FieldModel,
    OptimizerState,
    adam_step,
    lr_at,
    softplus,
    softplus_grad,
)
from .geometry import Aabb, batch_ray_aabb
from .losses import BatchBounds, LossWeights, batch_loss_terms
from .partition import ParentBlock, RayBundle
from .render import SamplingConfig, deltas_from_nodes, fine_sample_batch, segmented_sample_batch

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 1024
    seed: int = 0
    base_lr: float = 4e-5
    sampling: SamplingConfig = dc_field(default_factory=SamplingConfig)
    loss_weights: LossWeights = dc_field(default_factory=LossWeights)
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    dtype: str = "float64"
    chunk_samples: int = 16384

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


def ray_bounds_arrays(parent: ParentBlock, rays: RayBundle):
    """Per-ray parent far bound and child interval (NaN where no child)."""
    t_enter, t_exit, hit = batch_ray_aabb(
        rays.origins,
        rays.dirs,
        parent.box.min_corner[None, :],
        parent.box.max_corner[None, :],
    )
    if not np.all(hit[:, 0]):
        raise ValueError("every training ray must intersect its parent box")
    f_p = np.maximum(t_exit[:, 0], rays.depths)  # endpoint sits inside the box

    n_c = np.full(len(rays), np.nan)
    f_c = np.full(len(rays), np.nan)
    for child in parent.children:
        mask = rays.child_ids == child.segment_id
        if not np.any(mask):
            continue
        enter, exit_, chit = batch_ray_aabb(
            rays.origins[mask],
            rays.dirs[mask],
            child.box.min_corner[None, :],
            child.box.max_corner[None, :],
        )
        idx = np.nonzero(mask)[0][chit[:, 0]]
        n_c[idx] = enter[chit[:, 0], 0]
        f_c[idx] = exit_[chit[:, 0], 0]
    n_c = np.minimum(n_c, f_p)
    f_c = np.minimum(f_c, f_p)
    return f_p, n_c, f_c


def _sigma_of(model: FieldModel, points: np.ndarray, chunk: int):
    """Density without caching, for the coarse (no-gradient) pass."""
    flat = points.reshape(-1, 3)
    out = np.empty(flat.shape[0], dtype=model.dtype)
    for i in range(0, flat.shape[0], chunk):
        out[i : i + chunk] = softplus(model.raw_forward(model.encode(flat[i : i + chunk])))
    return out.reshape(points.shape[:-1])


def _step(
    model: FieldModel,
    rays: RayBundle,
    idx: np.ndarray,
    bounds_all,
    cfg: TrainConfig,
    rng: np.random.Generator,
):
    """One forward/backward pass over a ray batch; returns (parts, grad)."""
    f_p_all, n_c_all, f_c_all = bounds_all
    lw = cfg.loss_weights
    n = idx.shape[0]
    t0 = np.zeros(n)
    bb = BatchBounds(t0, f_p_all[idx], n_c_all[idx], f_c_all[idx], lw.eps, lw.gamma)
    origins = rays.origins[idx]
    dirs = rays.dirs[idx]
    depths = rays.depths[idx]

    child_lo, child_hi = bb.child_sample_interval()
    t_coarse = segmented_sample_batch(
        rng, bb.t0, bb.f_p, child_lo, child_hi, bb.has_child, cfg.sampling.n_coarse, cfg.sampling.lambda_in
    )
    pts = origins[:, None, :] + t_coarse[..., None] * dirs[:, None, :]
    sigma_c = _sigma_of(model, pts, cfg.chunk_samples).astype(float)
    delta_c = deltas_from_nodes(t_coarse, bb.f_p)
    w_c, _ = kernels.alpha_composite(sigma_c, delta_c)

    if cfg.sampling.n_fine > 0:
        t_fine = fine_sample_batch(rng, t_coarse, w_c, bb.f_p, cfg.sampling.n_fine)
        t = np.concatenate([t_coarse, t_fine], axis=1)
        t.sort(axis=1)
    else:
        t = t_coarse
    delta = deltas_from_nodes(t, bb.f_p)

    grad = np.zeros_like(model.theta)
    parts_sum = np.zeros(4)  # total, pd, cf, cd
    rays_per_chunk = max(1, cfg.chunk_samples // t.shape[1])
    for lo in range(0, n, rays_per_chunk):
        hi = min(n, lo + rays_per_chunk)
        sl = slice(lo, hi)
        t_sl, d_sl = t[sl], delta[sl]
        pts = origins[sl, None, :] + t_sl[..., None] * dirs[sl, None, :]
        x_enc = model.encode(pts.reshape(-1, 3))
        raw, cache = model.raw_forward(x_enc, need_cache=True)
        sigma = softplus(raw).astype(float).reshape(t_sl.shape)
        w, t_incl = kernels.alpha_composite(sigma, d_sl)

        bb_sl = BatchBounds(bb.t0[sl], bb.f_p[sl], bb.n_c[sl], bb.f_c[sl], lw.eps, lw.gamma)
        (pd, cf, cd), (dpd, dcf, dcd) = batch_loss_terms(t_sl, d_sl, w, bb_sl, depths[sl], want_grad=True)
        has = bb_sl.has_child
        per_ray = lw.lambda_pd * pd + np.where(has, lw.lambda_cf * cf + lw.lambda_cd * cd, 0.0)
        parts_sum += [per_ray.sum(), pd.sum(), cf.sum(), cd.sum()]

        d_w = (lw.lambda_pd * dpd + has[:, None] * (lw.lambda_cf * dcf + lw.lambda_cd * dcd)) / n
        d_sigma = kernels.composite_backward(d_w, w, t_incl, d_sl)
        d_raw = (d_sigma.reshape(-1) * softplus_grad(raw)).astype(model.dtype)
        grad += model.raw_backward(cache, d_raw)

    parts = {
        "total": parts_sum[0] / n,
        "parent_depth": parts_sum[1] / n,
        "child_free": parts_sum[2] / n,
        "child_depth": parts_sum[3] / n,
    }
    return parts, grad


def train(
    parent: ParentBlock,
    rays: RayBundle,
    cfg: TrainConfig,
    init: tuple[FieldModel, OptimizerState, int] | None = None,
    log_lines: list[str] | None = None,
) -> tuple[FieldModel, OptimizerState, list[str]]:
    """Optimize one block's field over its training rays.

    Deterministic under a fixed seed. `init` resumes from (model, optimizer
    state, epochs already done). Returns the model, the optimizer state, and
    tab-separated per-step log lines.
    """
    if len(rays) == 0:
        raise ValueError("no training rays")
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    if init is None:
        model = FieldModel.init(cfg.field, parent.box, cfg.seed, dtype=dtype)
        state = OptimizerState.fresh(model.theta.size, dtype=dtype)
        epoch_done = 0
    else:
        model, state, epoch_done = init

    log = log_lines if log_lines is not None else []
    if not log:
        log.append("step\tepoch\tlr\ttotal\tparent_depth\tchild_free\tchild_depth\twall_s")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch_done]))
    bounds_all = ray_bounds_arrays(parent, rays)

    step = epoch_done * int(np.ceil(len(rays) / cfg.batch_size))
    for epoch in range(epoch_done, cfg.epochs):
        lr = lr_at(epoch, cfg.base_lr)
        perm = rng.permutation(len(rays))
        for lo in range(0, len(rays), cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            tic = time.perf_counter()
            parts, grad = _step(model, rays, idx, bounds_all, cfg, rng)
            if not np.isfinite(parts["total"]) or not np.all(np.isfinite(grad)):
                frames = sorted(set(rays.frame_ids[idx].tolist()))
                raise TrainingError(
                    f"non-finite loss at step {step} (rays from frames {frames})"
                )
            adam_step(state, model.theta, grad, lr)
            wall = time.perf_counter() - tic
            log.append(
                f"{step}\t{epoch}\t{lr:.3e}\t{parts['total']:.6f}\t{parts['parent_depth']:.6f}"
                f"\t{parts['child_free']:.6e}\t{parts['child_depth']:.6f}\t{wall:.3f}"
            )
            step += 1
    return model, state, log


def evaluate_loss(
    model: FieldModel,
    rays: RayBundle,
    parent: ParentBlock,
    cfg: TrainConfig,
    seed: int = 1234,
) -> dict:
    """Loss components on a fixed ray set without updating parameters."""
    rng = np.random.default_rng(seed)
    bounds_all = ray_bounds_arrays(parent, rays)
    parts, _ = _step(model, rays, np.arange(len(rays)), bounds_all, cfg, rng)
    return parts


def save_checkpoint(path, model: FieldModel, state: OptimizerState, epoch: int) -> None:
    """Versioned binary checkpoint; load() round-trips bit-exactly."""
    meta = {
        "cfg": {
            "enc_levels": model.cfg.enc_levels,
            "hidden_layers": model.cfg.hidden_layers,
            "hidden_width": model.cfg.hidden_width,
            "skip_at": model.cfg.skip_at,
        },
        "adam": {"beta1": state.beta1, "beta2": state.beta2, "eps_adam": state.eps_adam},
        "dtype": str(model.theta.dtype),
    }
    with open(path, "wb") as f:
        np.savez(
            f,
            version=np.int64(CHECKPOINT_VERSION),
            meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
            box_min=model.bounds.min_corner,
            box_max=model.bounds.max_corner,
            theta=model.theta,
            m=state.m,
            v=state.v,
            t=np.int64(state.t),
            epoch=np.int64(epoch),
        )


def load_checkpoint(path) -> tuple[FieldModel, OptimizerState, int]:
    try:
        data = np.load(path)
        version = int(data["version"])
    except (zipfile.BadZipFile, OSError, EOFError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version} does not match supported version {CHECKPOINT_VERSION}"
        )
    try:
        meta = json.loads(bytes(data["meta"]).decode())
        cfg = FieldConfig(**meta["cfg"])
        model = FieldModel.init(cfg, Aabb(data["box_min"], data["box_max"]), seed=0)
        theta = data["theta"]
        if theta.shape != model.theta.shape:
            raise CheckpointError(f"{path}: parameter count does not match layout")
        model.theta = theta
        state = OptimizerState(m=data["m"], v=data["v"], t=int(data["t"]), **meta["adam"])
        return model, state, int(data["epoch"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing checkpoint field {exc}") from exc
