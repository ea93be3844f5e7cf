"""Trainable density field: frequency encoding, MLP, gradients, Adam.

The field maps a world position (normalized per parent box to [-1, 1]^3)
through a sin/cos frequency encoding and a ReLU MLP to a scalar raw output;
softplus makes the volumetric density non-negative. Gradients are computed
by hand layer by layer, which keeps the whole train step inside numpy and
lets tests check them against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import expit

from .geometry import Aabb


@dataclass(frozen=True)
class FieldConfig:
    enc_levels: int = 10
    hidden_layers: int = 8
    hidden_width: int = 256
    skip_at: int = 5  # hidden layer that re-reads the encoded input

    def __post_init__(self):
        if self.enc_levels < 0 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("invalid field architecture")

    @property
    def enc_dim(self) -> int:
        return 3 + 6 * self.enc_levels

    @property
    def has_skip(self) -> bool:
        return 0 < self.skip_at < self.hidden_layers


def positional_encode(x: np.ndarray, levels: int) -> np.ndarray:
    """Frequency features (x, sin(2^l pi x), cos(2^l pi x)) for l < levels.

    x: (N, 3) with components in [-1, 1] (1e-6 slack). Output dim: 3 + 6*levels.
    """
    x = np.atleast_2d(np.asarray(x))
    if np.max(np.abs(x), initial=0.0) > 1.0 + 1e-6:
        raise ValueError("encode input must be normalized to [-1, 1]")
    if levels == 0:
        return x.copy()
    freqs = (2.0 ** np.arange(levels)) * np.pi
    phases = x[:, None, :] * freqs[None, :, None]  # (N, L, 3)
    feats = np.concatenate([np.sin(phases), np.cos(phases)], axis=2)  # (N, L, 6)
    return np.concatenate([x, feats.reshape(x.shape[0], -1)], axis=1)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _layer_dims(cfg: FieldConfig) -> list[tuple[int, int]]:
    dims = []
    for i in range(cfg.hidden_layers):
        if i == 0:
            fan_in = cfg.enc_dim
        elif cfg.has_skip and i == cfg.skip_at:
            fan_in = cfg.hidden_width + cfg.enc_dim
        else:
            fan_in = cfg.hidden_width
        dims.append((fan_in, cfg.hidden_width))
    dims.append((cfg.hidden_width, 1))
    return dims


@dataclass
class FieldModel:
    """Density field bound to one parent box; parameters live in a flat vector."""

    cfg: FieldConfig
    bounds: Aabb
    theta: np.ndarray
    layout: list[tuple[str, tuple[int, ...], int]] = dc_field(default_factory=list)

    @classmethod
    def init(cls, cfg: FieldConfig, bounds: Aabb, seed: int, dtype=np.float64) -> "FieldModel":
        rng = np.random.default_rng(seed)
        layout, chunks, offset = [], [], 0
        for i, (fan_in, fan_out) in enumerate(_layer_dims(cfg)):
            name = "head" if fan_out == 1 else f"h{i}"
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            b = np.zeros(fan_out)
            if name == "head":
                b[:] = -3.0  # start nearly transparent so depth signals reach far samples
            for suffix, arr in (("w", w), ("b", b)):
                layout.append((f"{name}.{suffix}", arr.shape, offset))
                chunks.append(arr.reshape(-1))
                offset += arr.size
        theta = np.concatenate(chunks).astype(dtype)
        return cls(cfg=cfg, bounds=bounds, theta=theta, layout=layout)

    @property
    def dtype(self):
        return self.theta.dtype

    def views(self) -> dict[str, np.ndarray]:
        """Named views into the flat parameter vector (shared memory)."""
        out = {}
        for name, shape, offset in self.layout:
            size = int(np.prod(shape))
            out[name] = self.theta[offset : offset + size].reshape(shape)
        return out

    def normalize(self, points: np.ndarray) -> np.ndarray:
        ext = np.maximum(self.bounds.extent, 1e-9)
        x = 2.0 * (np.asarray(points) - self.bounds.min_corner) / ext - 1.0
        return np.clip(x, -1.0, 1.0)

    def encode(self, points: np.ndarray) -> np.ndarray:
        return positional_encode(self.normalize(points), self.cfg.enc_levels).astype(self.dtype)

    def raw_forward(self, x_enc: np.ndarray, need_cache: bool = False):
        """MLP forward on encoded inputs -> raw (N,) pre-softplus output."""
        v = self.views()
        h = x_enc
        cache = {"inputs": [], "masks": []} if need_cache else None
        for i in range(self.cfg.hidden_layers):
            if self.cfg.has_skip and i == self.cfg.skip_at:
                h = np.concatenate([h, x_enc], axis=1)
            z = h @ v[f"h{i}.w"] + v[f"h{i}.b"]
            if need_cache:
                cache["inputs"].append(h)
                cache["masks"].append(z > 0)
            h = np.maximum(z, 0.0)
        raw = (h @ v["head.w"] + v["head.b"]).reshape(-1)
        if need_cache:
            cache["inputs"].append(h)
            return raw, cache
        return raw

    def raw_backward(self, cache: dict, d_raw: np.ndarray) -> np.ndarray:
        """Backprop d(loss)/d(raw) through the MLP; returns a flat gradient."""
        v = self.views()
        grad = np.zeros_like(self.theta)
        g = {}
        for name, shape, offset in self.layout:
            size = int(np.prod(shape))
            g[name] = grad[offset : offset + size].reshape(shape)

        h_last = cache["inputs"][-1]
        d_col = d_raw.reshape(-1, 1).astype(self.dtype)
        g["head.w"] += h_last.T @ d_col
        g["head.b"] += d_col.sum(axis=0)
        dh = d_col @ v["head.w"].T
        for i in range(self.cfg.hidden_layers - 1, -1, -1):
            dz = dh * cache["masks"][i]
            inp = cache["inputs"][i]
            g[f"h{i}.w"] += inp.T @ dz
            g[f"h{i}.b"] += dz.sum(axis=0)
            dh = dz @ v[f"h{i}.w"].T
            if self.cfg.has_skip and i == self.cfg.skip_at:
                dh = dh[:, : self.cfg.hidden_width]  # encoded part is constant
        return grad

    def density(self, points: np.ndarray, chunk: int = 262144) -> np.ndarray:
        """Non-negative volumetric density at world points (N, 3) -> (N,)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        out = np.empty(pts.shape[0], dtype=self.dtype)
        for i in range(0, pts.shape[0], chunk):
            raw = self.raw_forward(self.encode(pts[i : i + chunk]))
            out[i : i + chunk] = softplus(raw)
        return out

    def copy(self) -> "FieldModel":
        return FieldModel(self.cfg, self.bounds, self.theta.copy(), list(self.layout))


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def fresh(cls, n_params: int, dtype=np.float64) -> "OptimizerState":
        return cls(m=np.zeros(n_params, dtype=dtype), v=np.zeros(n_params, dtype=dtype))


def adam_step(
    state: OptimizerState, theta: np.ndarray, grad: np.ndarray, lr: float
) -> tuple[np.ndarray, OptimizerState]:
    """One bias-corrected Adam update, applied in place on theta."""
    if grad.shape != theta.shape:
        raise ValueError("gradient/parameter shape mismatch")
    state.t += 1
    state.m += (1.0 - state.beta1) * (grad - state.m)
    state.v += (1.0 - state.beta2) * (grad * grad - state.v)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    update = lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
    if not np.all(np.isfinite(update)):
        raise FloatingPointError("non-finite Adam update")
    theta -= update.astype(theta.dtype)
    return theta, state


def lr_at(epoch: int, base: float, milestones: tuple[int, int] = (5, 120), factor: float = 0.1) -> float:
    """Piecewise-constant schedule: base, then base*0.1, then base*0.01."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    lr = base
    for m in milestones:
        if epoch >= m:
            lr *= factor
    return lr


def softplus_grad(raw: np.ndarray) -> np.ndarray:
    return expit(raw)
