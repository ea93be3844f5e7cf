"""Shared test fixtures: analytic density fields and brute-force oracles.

Oracles here are deliberately naive (dense sampling, O(n^2) scans) and stay
independent of the library code paths they check.
"""

import numpy as np


class SlabField:
    """Piecewise-constant density: sigma0 for x in [x_lo, x_hi], else zero."""

    def __init__(self, x_lo, x_hi, sigma0):
        self.x_lo = x_lo
        self.x_hi = x_hi
        self.sigma0 = sigma0

    def density(self, points):
        x = np.asarray(points, dtype=float).reshape(-1, 3)[:, 0]
        return np.where((x >= self.x_lo) & (x <= self.x_hi), self.sigma0, 0.0)


class BoxField:
    """Constant density inside an axis-aligned box, zero elsewhere."""

    def __init__(self, lo, hi, sigma0):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.sigma0 = sigma0

    def density(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        inside = np.all((pts >= self.lo) & (pts <= self.hi), axis=1)
        return np.where(inside, self.sigma0, 0.0)


def slab_analytic_depth(a, b, sigma0):
    """Closed-form unnormalized rendered depth of an opaque slab on [a, b].

    w(t) = sigma0 * exp(-sigma0 (t - a)) inside the slab, zero outside, so
    the integral of w(t) t over the full ray is
    a (1 - E) + (1 - E (1 + sigma0 L)) / sigma0 with L = b - a, E = e^{-sigma0 L}.
    """
    L = b - a
    E = np.exp(-sigma0 * L)
    return a * (1.0 - E) + (1.0 - E * (1.0 + sigma0 * L)) / sigma0


def slab_analytic_weight(a, b, sigma0):
    return 1.0 - np.exp(-sigma0 * (b - a))


def brute_force_ray_box(origin, direction, box_min, box_max, t_lo, t_hi, n_samples):
    """Dense-sampling containment oracle: (hit, first_t, last_t)."""
    ts = np.linspace(t_lo, t_hi, n_samples)
    pts = origin[None, :] + ts[:, None] * direction[None, :]
    inside = np.all((pts >= box_min) & (pts <= box_max), axis=1)
    if not np.any(inside):
        return False, None, None
    idx = np.nonzero(inside)[0]
    return True, ts[idx[0]], ts[idx[-1]]


def brute_force_clusters(points, radius, min_points):
    """O(n^2) connected components under a closed distance threshold."""
    n = points.shape[0]
    if n == 0:
        return []
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    adj = d2 <= radius * radius
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            i = stack.pop()
            comp.append(i)
            nbrs = np.nonzero(adj[i] & ~seen)[0]
            seen[nbrs] = True
            stack.extend(nbrs.tolist())
        if len(comp) >= min_points:
            comps.append(np.sort(np.array(comp)))
    comps.sort(key=lambda idx: int(idx[0]))
    return comps


def brute_force_nn(query, target):
    """Exact nearest-neighbor distances without spatial indexing."""
    d2 = np.sum((query[:, None, :] - target[None, :, :]) ** 2, axis=2)
    return np.sqrt(d2.min(axis=1))


def brute_force_chamfer(a, b):
    d_ab = brute_force_nn(a, b).mean()
    d_ba = brute_force_nn(b, a).mean()
    return d_ab, d_ba, 0.5 * (d_ab + d_ba)


def brute_force_f_score(a, b, tau):
    precision = (brute_force_nn(a, b) <= tau).mean()
    recall = (brute_force_nn(b, a) <= tau).mean()
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def brute_force_march(origin, direction, t_max, step, is_occupied):
    """Fine-step ray marcher: first t whose cell is occupied, else None."""
    ts = np.arange(0.0, t_max, step)
    pts = origin[None, :] + ts[:, None] * direction[None, :]
    hits = is_occupied(pts)
    if not np.any(hits):
        return None
    return ts[int(np.argmax(hits))]


def make_gradcheck_case(seed=11, n_rays=4, n_samples=16):
    """Tiny model + frozen ray batch for finite-difference gradient checks.

    Nodes are sampled once and frozen so the loss is a smooth function of the
    parameters alone. Every ray carries a child interval around its target
    depth so all three loss terms are exercised.
    """
    import numpy as np

    from lidarfield.field import FieldConfig, FieldModel
    from lidarfield.geometry import Aabb
    from lidarfield.losses import BatchBounds, LossWeights

    rng = np.random.default_rng(seed)
    cfg = FieldConfig(enc_levels=2, hidden_layers=2, hidden_width=16, skip_at=5)
    box = Aabb(np.array([0.0, -5.0, -5.0]), np.array([50.0, 5.0, 5.0]))
    model = FieldModel.init(cfg, box, seed=seed)

    origins = np.column_stack(
        [np.full(n_rays, 0.5), rng.uniform(-2, 2, n_rays), rng.uniform(-2, 2, n_rays)]
    )
    dirs = np.column_stack([np.ones(n_rays), rng.uniform(-0.05, 0.05, (n_rays, 2))])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    f_p = np.full(n_rays, 45.0)
    depth = rng.uniform(12.0, 35.0, n_rays)
    bounds = BatchBounds(
        t0=np.zeros(n_rays),
        f_p=f_p,
        n_c=depth - 1.0,
        f_c=depth + 1.0,
        eps=0.3,
        gamma=2.0,
    )
    t = np.sort(rng.uniform(0.0, 45.0, (n_rays, n_samples)), axis=1)
    lw = LossWeights(lambda_pd=1.0, lambda_cf=1.0, lambda_cd=1.0, eps=0.3, gamma=2.0)
    return model, origins, dirs, t, bounds, depth, lw


def gradcheck_loss_and_grad(model, origins, dirs, t, bounds, depth, lw, term):
    """Loss value and analytic parameter gradient for one loss term.

    term: 'parent_depth' | 'child_free' | 'child_depth' | 'total'. Uses the
    same composite-backward / MLP-backward path the trainer uses.
    """
    import numpy as np

    from lidarfield import kernels
    from lidarfield.field import softplus, softplus_grad
    from lidarfield.losses import batch_loss_terms
    from lidarfield.render import deltas_from_nodes

    n_rays = t.shape[0]
    delta = deltas_from_nodes(t, bounds.f_p)
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    x_enc = model.encode(pts.reshape(-1, 3))
    raw, cache = model.raw_forward(x_enc, need_cache=True)
    sigma = softplus(raw).reshape(t.shape)
    w, t_incl = kernels.alpha_composite(sigma, delta)
    (pd, cf, cd), (dpd, dcf, dcd) = batch_loss_terms(t, delta, w, bounds, depth, want_grad=True)
    values = {
        "parent_depth": pd.mean(),
        "child_free": cf.mean(),
        "child_depth": cd.mean(),
        "total": (lw.lambda_pd * pd + lw.lambda_cf * cf + lw.lambda_cd * cd).mean(),
    }
    grads_w = {
        "parent_depth": dpd,
        "child_free": dcf,
        "child_depth": dcd,
        "total": lw.lambda_pd * dpd + lw.lambda_cf * dcf + lw.lambda_cd * dcd,
    }
    d_w = grads_w[term] / n_rays
    d_sigma = kernels.composite_backward(d_w, w, t_incl, delta)
    d_raw = d_sigma.reshape(-1) * softplus_grad(raw)
    return float(values[term]), model.raw_backward(cache, d_raw)


def gradcheck_fd(model, origins, dirs, t, bounds, depth, lw, term, h=1e-5):
    """Central finite differences of the same loss over every parameter."""
    import numpy as np

    base = model.theta.copy()
    fd = np.zeros_like(base)
    for j in range(base.size):
        model.theta = base.copy()
        model.theta[j] += h
        up, _ = gradcheck_loss_and_grad(model, origins, dirs, t, bounds, depth, lw, term)
        model.theta = base.copy()
        model.theta[j] -= h
        down, _ = gradcheck_loss_and_grad(model, origins, dirs, t, bounds, depth, lw, term)
        fd[j] = (up - down) / (2 * h)
    model.theta = base
    return fd


def max_rel_error(a, b, floor=1e-6):
    """Elementwise relative error with an absolute floor for near-zero entries."""
    import numpy as np

    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
