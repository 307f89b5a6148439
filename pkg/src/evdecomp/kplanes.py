"""Factorized (x, y, tau) video field: three feature planes per scale, fused by
elementwise product and decoded by a small affine / one-hidden-layer decoder.

Coordinates live in the unit cube.  A plane of resolution ``(Ra, Rb)`` has its
nodes at ``i / (Ra - 1)``, so queries at node coordinates read stored values
exactly.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .errors import InputError, NumericalError
from .events import Frame, FrameSequence

__all__ = ["FeaturePlane", "KPlaneField", "query", "render_frame", "loss_and_grad", "fit",
           "pixel_queries", "AXES"]

logger = logging.getLogger(__name__)

AXES = ("xy", "xt", "yt")
# which query coordinate (x=0, y=1, tau=2) feeds each plane axis
_PROJ = {"xy": (0, 1), "xt": (0, 2), "yt": (1, 2)}


@dataclass
class FeaturePlane:
    axes: str
    values: np.ndarray  # (Ra, Rb, F)

    def __post_init__(self):
        if self.axes not in _PROJ:
            raise InputError(f"unknown plane axes {self.axes!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] < 2 or v.shape[1] < 2:
            raise InputError(f"plane needs shape (Ra>=2, Rb>=2, F), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("plane values must be finite")
        self.values = v

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class KPlaneField:
    """Plane triples per scale plus decoder.

    Linear decoder: ``out = weight @ z + bias`` with ``z`` the concatenated
    per-scale Hadamard features.  With ``w_hidden`` set:
    ``out = weight @ tanh(w_hidden @ z + b_hidden) + bias``.
    """

    scales: list[tuple[FeaturePlane, FeaturePlane, FeaturePlane]]
    weight: np.ndarray
    bias: np.ndarray
    w_hidden: np.ndarray | None = None
    b_hidden: np.ndarray | None = None
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if not self.scales:
            raise InputError("field needs at least one scale")
        feats = None
        for triple in self.scales:
            if len(triple) != 3 or tuple(p.axes for p in triple) != AXES:
                raise InputError("every scale needs planes in (xy, xt, yt) order")
            for p in triple:
                if feats is None:
                    feats = p.channels
                elif p.channels != feats:
                    raise InputError("all planes must share the channel count")
        self.weight = np.atleast_2d(np.asarray(self.weight, dtype=np.float64))
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        din = feats * len(self.scales)
        if self.w_hidden is not None:
            self.w_hidden = np.asarray(self.w_hidden, dtype=np.float64)
            self.b_hidden = np.asarray(self.b_hidden, dtype=np.float64).reshape(-1)
            if self.w_hidden.shape[1] != din or self.b_hidden.size != self.w_hidden.shape[0]:
                raise InputError("hidden layer shape does not match features")
            din = self.w_hidden.shape[0]
        if self.weight.shape[1] != din or self.bias.size != self.weight.shape[0]:
            raise InputError(f"decoder expects {din} inputs, weight is {self.weight.shape}")

    @classmethod
    def create(cls, features: int = 8, out_channels: int = 1, n_scales: int = 3,
               spatial_res: tuple[int, int] = (32, 32), temporal_res: int = 16,
               hidden: int | None = None, noise: float = 0.01, seed: int = 0) -> "KPlaneField":
        """Planes at ``1 + U(-noise, noise)``; spatial resolution halves per scale.

        Product fusion has a dead point at zero, hence the init near one.
        """
        rng = np.random.default_rng(seed)
        rx, ry = spatial_res
        scales = []
        for s in range(n_scales):
            sx, sy = max(2, rx >> s), max(2, ry >> s)
            shapes = {"xy": (sx, sy), "xt": (sx, temporal_res), "yt": (sy, temporal_res)}
            scales.append(tuple(
                FeaturePlane(a, 1.0 + rng.uniform(-noise, noise, shapes[a] + (features,)))
                for a in AXES))
        din = features * n_scales
        if hidden:
            w_hidden = rng.normal(0.0, 1.0 / np.sqrt(din), (hidden, din))
            b_hidden = np.zeros(hidden)
            weight = rng.normal(0.0, 1.0 / np.sqrt(hidden), (out_channels, hidden))
        else:
            w_hidden = b_hidden = None
            weight = np.full((out_channels, din), 1.0 / din)
        return cls(scales, weight, np.zeros(out_channels), w_hidden, b_hidden)

    @property
    def features(self) -> int:
        return self.scales[0][0].channels

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> array, in checkpoint order.  Arrays are live references."""
        params = {}
        for s, triple in enumerate(self.scales):
            for p in triple:
                params[f"s{s}.{p.axes}"] = p.values
        if self.w_hidden is not None:
            params["dec.w_hidden"] = self.w_hidden
            params["dec.b_hidden"] = self.b_hidden
        params["dec.weight"] = self.weight
        params["dec.bias"] = self.bias
        return params

    def copy(self) -> "KPlaneField":
        return copy.deepcopy(self)


def _sampling_matrix(u: np.ndarray, v: np.ndarray, ra: int, rb: int) -> sp.csr_matrix:
    """Sparse ``(N, ra*rb)`` bilinear interpolation matrix for coords in [0, 1]."""
    a = u * (ra - 1)
    b = v * (rb - 1)
    i0 = np.minimum(np.floor(a).astype(np.int64), ra - 2)
    j0 = np.minimum(np.floor(b).astype(np.int64), rb - 2)
    fa = a - i0
    fb = b - j0
    n = u.size
    rows = np.repeat(np.arange(n), 4)
    cols = np.stack([i0 * rb + j0, (i0 + 1) * rb + j0, i0 * rb + j0 + 1,
                     (i0 + 1) * rb + j0 + 1], 1).reshape(-1)
    w = np.stack([(1 - fa) * (1 - fb), fa * (1 - fb), (1 - fa) * fb, fa * fb], 1).reshape(-1)
    return sp.csr_matrix((w, (rows, cols)), shape=(n, ra * rb))


class _Samplers:
    """Per-plane sampling matrices for a fixed batch of query points."""

    def __init__(self, fld: KPlaneField, q: np.ndarray):
        self.mats = []
        for triple in fld.scales:
            row = []
            for p in triple:
                ia, ib = _PROJ[p.axes]
                row.append(_sampling_matrix(q[:, ia], q[:, ib], *p.resolution))
            self.mats.append(row)


def _check_queries(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 3:
        raise InputError("queries must have 3 coordinates (x, y, tau)")
    if not np.all(np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
        raise InputError("query coordinates must lie in the unit cube")
    return q


def _forward(fld: KPlaneField, samplers: _Samplers):
    feats, parts = [], []
    for triple, mats in zip(fld.scales, samplers.mats):
        vals = [m @ p.values.reshape(-1, p.channels) for p, m in zip(triple, mats)]
        parts.append(vals)
        feats.append(vals[0] * vals[1] * vals[2])
    z = np.concatenate(feats, axis=1)
    if fld.w_hidden is not None:
        h = np.tanh(z @ fld.w_hidden.T + fld.b_hidden)
        out = h @ fld.weight.T + fld.bias
    else:
        h = None
        out = z @ fld.weight.T + fld.bias
    return out, (z, h, parts)


def query(fld: KPlaneField, q) -> np.ndarray:
    """Decode at one point ``(x, y, tau)`` -> ``(C,)`` or a batch ``(N, 3)`` -> ``(N, C)``."""
    q = _check_queries(q)
    single = q.ndim == 1
    q2 = q.reshape(-1, 3)
    out, _ = _forward(fld, _Samplers(fld, q2))
    return out[0] if single else out


def pixel_queries(width: int, height: int, taus) -> np.ndarray:
    """Pixel-centre queries ``((i+0.5)/W, (j+0.5)/H, tau)``, ordered (tau, row, col)."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    tt, yy, xx = np.meshgrid(taus, ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), tt.ravel()], 1)


def render_frame(fld: KPlaneField, tau: float, width: int, height: int,
                 timestamp: float | None = None) -> Frame:
    out = query(fld, pixel_queries(width, height, [tau]))
    img = out.reshape(height, width, -1)
    if img.shape[2] == 1:
        img = img[..., 0]
    return Frame(np.clip(img, 0.0, 1.0), tau if timestamp is None else timestamp)


def _loss(resid: np.ndarray, kind: str, eps: float):
    n = resid.size
    if kind == "l2":
        return float(np.sum(resid ** 2) / n), 2.0 * resid / n
    if kind == "l1":
        r = np.sqrt(resid ** 2 + eps ** 2)
        return float(np.sum(r) / n), resid / r / n
    raise InputError(f"unknown loss {kind!r}")


def _backward(fld: KPlaneField, samplers: _Samplers, cache, dout: np.ndarray) -> dict:
    z, h, parts = cache
    grads = {}
    if h is not None:
        grads["dec.weight"] = dout.T @ h
        grads["dec.bias"] = dout.sum(0)
        dpre = (dout @ fld.weight) * (1.0 - h ** 2)
        grads["dec.w_hidden"] = dpre.T @ z
        grads["dec.b_hidden"] = dpre.sum(0)
        dz = dpre @ fld.w_hidden
    else:
        grads["dec.weight"] = dout.T @ z
        grads["dec.bias"] = dout.sum(0)
        dz = dout @ fld.weight
    f = fld.features
    for s, (triple, mats, vals) in enumerate(zip(fld.scales, samplers.mats, parts)):
        dzs = dz[:, s * f:(s + 1) * f]
        a, b, c = vals
        for p, m, g in zip(triple, mats, (dzs * b * c, dzs * a * c, dzs * a * b)):
            grads[f"s{s}.{p.axes}"] = (m.T @ g).reshape(p.values.shape)
    return grads


def loss_and_grad(fld: KPlaneField, q: np.ndarray, target: np.ndarray, loss: str = "l2",
                  eps: float = 1e-3, samplers: _Samplers | None = None):
    """Loss of decoded values at ``q`` against ``target`` ``(N, C)`` and its gradient.

    ``"l2"`` is the mean squared error, ``"l1"`` the mean of
    ``sqrt(r**2 + eps**2)``.  Gradients are keyed like :meth:`KPlaneField.parameters`.
    """
    if samplers is None:
        samplers = _Samplers(fld, _check_queries(q).reshape(-1, 3))
    out, cache = _forward(fld, samplers)
    value, dout = _loss(out - target.reshape(out.shape), loss, eps)
    return value, _backward(fld, samplers, cache, dout)


def _target_queries(fld: KPlaneField, target: FrameSequence, span):
    t = target.times
    if span is None:
        span = (t[0], t[-1])
    t0, t1 = span
    taus = np.zeros_like(t) if t1 == t0 else (t - t0) / (t1 - t0)
    h, w = target.shape
    q = pixel_queries(w, h, np.clip(taus, 0.0, 1.0))
    vals = target.frames.reshape(len(target) * h * w, -1)
    if vals.shape[1] != fld.out_channels:
        raise InputError(f"target has {vals.shape[1]} channels, field decodes {fld.out_channels}")
    return q, vals


def fit(fld: KPlaneField, target: FrameSequence, loss: str = "l2", steps: int = 500,
        step_size: float | tuple[float, float] = (1.0, 0.1), span=None,
        eps: float = 1e-3, log_every: int = 0):
    """Plain gradient descent of ``fld`` (in place) towards ``target``.

    ``step_size`` is one rate or ``(planes, decoder)``.  Frames map to
    ``tau = (t - t0) / (t1 - t0)`` over ``span`` (default: the target's first
    and last timestamps).  Returns ``(fld, trace)`` where ``trace`` holds the
    loss before every step and after the last one.

    The loss is a mean over samples, so gradients do not grow with the clip
    size and O(1) rates are the natural scale.
    """
    if steps < 1:
        raise InputError("steps must be >= 1")
    lr_plane, lr_dec = (step_size, step_size) if np.isscalar(step_size) else step_size
    q, vals = _target_queries(fld, target, span)
    samplers = _Samplers(fld, q)
    params = fld.parameters()
    trace = []
    for step in range(steps + 1):
        value, grads = loss_and_grad(fld, q, vals, loss, eps, samplers)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss at step {step}")
        trace.append(value)
        if step == steps:
            break
        for name, g in grads.items():
            lr = lr_dec if name.startswith("dec.") else lr_plane
            params[name] -= lr * g
        if log_every and step % log_every == 0:
            logger.info("kplane fit step %d loss %.3e", step, value)
    return fld, np.array(trace)
