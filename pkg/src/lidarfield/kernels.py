"""Hot numeric kernels with a compiled core and pure-numpy fallbacks.

Two kernels dominate inner-loop time: transmittance compositing along ray
samples, and integer-grid traversal for the voxel ray-casting baseline.
Both exist twice — in the optional Cython extension `lidarfield._kernels`
and as numpy implementations below. The compiled versions are selected at
import time when the extension built; set LIDARFIELD_FORCE_NUMPY=1 to force
the fallbacks. `benchmarks/bench_kernels.py` compares the two paths.

Both paths use the same operation order so results agree to the last bit on
typical inputs; tests assert agreement at 1e-14 relative tolerance.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _kernels as _ext
except ImportError:  # extension not built: numpy fallbacks take over
    _ext = None

HAVE_EXT = _ext is not None


def _use_ext() -> bool:
    return HAVE_EXT and os.environ.get("LIDARFIELD_FORCE_NUMPY", "") not in ("1", "true")


def alpha_composite_np(sigma: np.ndarray, delta: np.ndarray):
    """Discrete volume-rendering weights for (B, N) sample batches.

    alpha_i = 1 - exp(-sigma_i * delta_i); w_i = alpha_i * prod_{j<i}(1 - alpha_j).
    Returns (w, t_incl) where t_incl_i = exp(-sum_{j<=i} sigma_j delta_j) is the
    transmittance past sample i (needed by the backward pass).
    """
    optical = sigma * delta
    cum = np.cumsum(optical, axis=-1)
    t_incl = np.exp(-cum)
    t_excl = np.exp(-(cum - optical))
    w = -np.expm1(-optical) * t_excl
    return w, t_incl


def composite_backward_np(
    g: np.ndarray, w: np.ndarray, t_incl: np.ndarray, delta: np.ndarray
) -> np.ndarray:
    """Gradient of a weight-functional through compositing: dL/dsigma.

    Given g = dL/dw, uses dL/dsigma_k = delta_k * (g_k * T_{k+1} - S_k) with
    S_k = sum_{i>k} g_i w_i; no divisions, stable as alpha -> 1.
    """
    gw = g * w
    suffix = np.cumsum(gw[..., ::-1], axis=-1)[..., ::-1] - gw
    return delta * (g * t_incl - suffix)


def cast_rays_np(
    origins: np.ndarray,
    dirs: np.ndarray,
    t_max: float,
    voxel: float,
    grid_origin: np.ndarray,
    dims: np.ndarray,
    cells_sorted: np.ndarray,
) -> np.ndarray:
    """Amanatides-Woo grid traversal for a batch of rays (lockstep, vectorized).

    Returns per-ray distance to the entry face of the first occupied cell,
    or -1.0 for a miss. cells_sorted holds linearized occupied-cell indices
    (ix * ny * nz + iy * nz + iz), sorted ascending.
    """
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n_rays = o.shape[0]
    gmin = np.asarray(grid_origin, dtype=float).reshape(3)
    dims = np.asarray(dims, dtype=np.int64).reshape(3)
    gmax = gmin + dims * voxel

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (gmin - o) * inv
        t2 = (gmax - o) * inv
    para = d == 0.0
    inside = (o >= gmin) & (o <= gmax)
    axis_lo = np.where(para, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    axis_hi = np.where(para, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_enter = np.maximum(axis_lo.max(axis=1), 0.0)
    t_exit = np.minimum(axis_hi.min(axis=1), t_max)

    depths = np.full(n_rays, -1.0)
    active = t_enter <= t_exit

    p = o + t_enter[:, None] * d
    cell = np.clip(np.floor((p - gmin) / voxel).astype(np.int64), 0, dims - 1)
    step = np.where(d > 0, 1, np.where(d < 0, -1, 0)).astype(np.int64)
    with np.errstate(divide="ignore"):
        t_delta = np.where(d != 0, voxel / np.abs(d), np.inf)
        next_face = gmin + (cell + (step > 0)) * voxel
        t_next = np.where(d != 0, (next_face - o) / d, np.inf)
    t_entry = t_enter.copy()

    strides = np.array([dims[1] * dims[2], dims[2], 1], dtype=np.int64)
    while np.any(active):
        idx = np.nonzero(active)[0]
        lin = cell[idx] @ strides
        pos = np.searchsorted(cells_sorted, lin)
        occupied = (pos < cells_sorted.size) & (cells_sorted[np.minimum(pos, cells_sorted.size - 1)] == lin)
        hit_idx = idx[occupied]
        depths[hit_idx] = t_entry[hit_idx]
        active[hit_idx] = False

        idx = idx[~occupied]
        if idx.size == 0:
            break
        axis = np.argmin(t_next[idx], axis=1)
        t_step = t_next[idx, axis]
        done = t_step > t_exit[idx]
        active[idx[done]] = False
        idx, axis, t_step = idx[~done], axis[~done], t_step[~done]
        t_entry[idx] = t_step
        cell[idx, axis] += step[idx, axis]
        out = (cell[idx, axis] < 0) | (cell[idx, axis] >= dims[axis])
        active[idx[out]] = False
        t_next[idx, axis] += t_delta[idx, axis]
    return depths


def alpha_composite(sigma: np.ndarray, delta: np.ndarray):
    if _use_ext():
        s = np.ascontiguousarray(sigma, dtype=np.float64)
        dl = np.ascontiguousarray(delta, dtype=np.float64)
        flat = s.ndim == 1
        if flat:
            s, dl = s[None, :], dl[None, :]
        w, t_incl = _ext.alpha_composite(s, dl)
        return (w[0], t_incl[0]) if flat else (w, t_incl)
    return alpha_composite_np(np.asarray(sigma, float), np.asarray(delta, float))


def composite_backward(g, w, t_incl, delta):
    if _use_ext():
        args = [np.ascontiguousarray(a, dtype=np.float64) for a in (g, w, t_incl, delta)]
        flat = args[0].ndim == 1
        if flat:
            args = [a[None, :] for a in args]
        out = _ext.composite_backward(*args)
        return out[0] if flat else out
    return composite_backward_np(*(np.asarray(a, float) for a in (g, w, t_incl, delta)))


def cast_rays(origins, dirs, t_max, voxel, grid_origin, dims, cells_sorted):
    if _use_ext():
        return _ext.cast_rays(
            np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3),
            np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3),
            float(t_max),
            float(voxel),
            np.ascontiguousarray(grid_origin, dtype=np.float64).reshape(3),
            np.ascontiguousarray(dims, dtype=np.int64).reshape(3),
            np.ascontiguousarray(cells_sorted, dtype=np.int64),
        )
    return cast_rays_np(origins, dirs, t_max, voxel, grid_origin, dims, cells_sorted)
