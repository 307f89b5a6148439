"""Continuous per-pixel trajectories from K shared temporal basis functions.

A pixel ``p`` is displaced to ``p + sum_k alpha_k(p) * g_k(tau)`` at normalised
time ``tau`` in [0, 1].  All bases are anchored (``g_k(0) == 0``) so the first
frame is left in place.  Coefficients are stored as ``(H, W, 2K)``: the first K
drive x, the last K drive y.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InputError

__all__ = ["MotionBasis", "TrajectoryField", "eval_basis", "eval_trajectory",
           "eval_flow_field", "fit_tracks", "fit_coefficients", "trajectories_matrix",
           "pixel_grid"]

BASIS_KINDS = ("polynomial", "cosine", "tabulated")


@dataclass(frozen=True, eq=False)
class MotionBasis:
    """``polynomial``: ``t**k``; ``cosine``: ``cos(pi*k*t) - 1``, k = 1..K.

    ``tabulated`` interpolates ``samples`` ``(S, K)`` given on ``linspace(0, 1, S)``
    and subtracts the first row so every function starts at zero.
    """

    kind: str = "polynomial"
    K: int = 5
    samples: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise InputError(f"unknown basis kind {self.kind!r}")
        if self.kind == "tabulated":
            s = np.asarray(self.samples, dtype=np.float64)
            if s.ndim != 2 or s.shape[0] < 2:
                raise InputError("tabulated basis needs samples of shape (S>=2, K)")
            s = s - s[0]
            s.flags.writeable = False
            object.__setattr__(self, "samples", s)
            object.__setattr__(self, "K", s.shape[1])
        if self.K < 1:
            raise InputError("basis needs K >= 1")

    def __eq__(self, other):
        if not isinstance(other, MotionBasis):
            return NotImplemented
        if (self.kind, self.K) != (other.kind, other.K):
            return False
        return self.samples is None or np.array_equal(self.samples, other.samples)

    def __hash__(self):
        return hash((self.kind, self.K))

    def describe(self) -> str:
        lines = [f"kind={self.kind}", f"K={self.K}"]
        if self.kind == "tabulated":
            for k in range(self.K):
                lines.append(f"g{k + 1}=" + ",".join(repr(float(v)) for v in self.samples[:, k]))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "MotionBasis":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        kind = kv.get("kind", "polynomial").strip()
        K = int(kv.get("K", 5))
        if kind == "tabulated":
            cols = [np.array(kv[f"g{k + 1}"].split(","), dtype=float) for k in range(K)]
            return cls(kind, K, np.stack(cols, 1))
        return cls(kind, K)


def eval_basis(basis: MotionBasis, t) -> np.ndarray:
    """Basis values at normalised time(s) ``t``: shape ``t.shape + (K,)``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
        raise InputError("normalised time must lie in [0, 1]")
    k = np.arange(1, basis.K + 1)
    tt = t[..., None]
    if basis.kind == "polynomial":
        return tt ** k
    if basis.kind == "cosine":
        return np.cos(np.pi * k * tt) - 1.0
    grid = np.linspace(0.0, 1.0, basis.samples.shape[0])
    flat = t.reshape(-1)
    out = np.stack([np.interp(flat, grid, basis.samples[:, j]) for j in range(basis.K)], -1)
    return out.reshape(t.shape + (basis.K,))


def _combine(coef: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``sum_k coef[..., k] * g[..., k]`` accumulated in a fixed k order.

    Shared by the pointwise and the matrix path so both round identically.
    """
    acc = coef[..., 0] * g[..., 0]
    for k in range(1, coef.shape[-1]):
        acc = acc + coef[..., k] * g[..., k]
    return acc


def pixel_grid(height: int, width: int) -> np.ndarray:
    """``(H, W, 2)`` array of ``(x, y)`` pixel coordinates."""
    yy, xx = np.mgrid[0:height, 0:width]
    return np.stack([xx, yy], -1).astype(np.float64)


@dataclass(frozen=True)
class TrajectoryField:
    basis: MotionBasis
    coefficients: np.ndarray  # (H, W, 2K)
    t0: float = 0.0
    t1: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] != 2 * self.basis.K:
            raise InputError(f"coefficients must be (H, W, {2 * self.basis.K}), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InputError("coefficients must be finite")
        if not self.t1 > self.t0:
            raise InputError("trajectory span must have positive duration")
        c.flags.writeable = False
        object.__setattr__(self, "coefficients", c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.coefficients.shape[:2]

    @property
    def K(self) -> int:
        return self.basis.K

    def normalize_time(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < self.t0) or np.any(t > self.t1):
            raise InputError(f"time outside trajectory span [{self.t0}, {self.t1}]")
        return (t - self.t0) / (self.t1 - self.t0)


def eval_trajectory(fld: TrajectoryField, pixel: tuple[int, int], t: float) -> np.ndarray:
    """Position ``(x, y)`` at time ``t`` of the point that starts at ``pixel``."""
    x, y = pixel
    h, w = fld.shape
    if not (0 <= x < w and 0 <= y < h):
        raise InputError(f"pixel {pixel} outside {w}x{h}")
    g = eval_basis(fld.basis, fld.normalize_time(t))
    a = fld.coefficients[y, x]
    K = fld.K
    return np.array([x + _combine(a[:K], g), y + _combine(a[K:], g)])


def eval_flow_field(fld: TrajectoryField, t: float) -> np.ndarray:
    """Dense displacement ``M(t)`` of every pixel, shape ``(H, W, 2)``."""
    g = eval_basis(fld.basis, fld.normalize_time(t))
    K = fld.K
    c = fld.coefficients
    return np.stack([_combine(c[..., :K], g), _combine(c[..., K:], g)], -1)


def trajectories_matrix(fld: TrajectoryField, pixels, times) -> np.ndarray:
    """Positions of ``pixels`` ``(N, 2)`` at ``times`` ``(T,)`` as ``(N, T, 2)``.

    Computes ``X = Lambda @ Theta`` per axis, with ``Theta`` the ``(K, T)``
    basis matrix; equal bit for bit to :func:`eval_trajectory` per entry.
    """
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    h, w = fld.shape
    if np.any(pixels < 0) or np.any(pixels[:, 0] >= w) or np.any(pixels[:, 1] >= h):
        raise InputError("pixel outside the coefficient grid")
    theta = eval_basis(fld.basis, fld.normalize_time(np.atleast_1d(times)))  # (T, K)
    lam = fld.coefficients[pixels[:, 1], pixels[:, 0]]  # (N, 2K)
    K = fld.K
    gx = theta[None, :, :]
    xs = pixels[:, 0:1] + _combine(lam[:, None, :K], gx)
    ys = pixels[:, 1:2] + _combine(lam[:, None, K:], gx)
    return np.stack([xs, ys], -1)


def fit_tracks(basis: MotionBasis, displacements: np.ndarray, taus) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients for displacement tracks.

    ``displacements`` is ``(N, T, 2)`` (position minus start) at normalised
    times ``taus``.  Returns coefficients ``(N, 2K)`` and residual RMS ``(N,)``.
    One QR factorisation of ``Theta^T`` serves every track.
    """
    d = np.asarray(displacements, dtype=np.float64)
    taus = np.asarray(taus, dtype=np.float64).reshape(-1)
    if d.ndim != 3 or d.shape[1] != taus.size or d.shape[2] != 2:
        raise InputError("displacements must be (N, T, 2) with one time per sample")
    theta_t = eval_basis(basis, taus)  # (T, K)
    rank = np.linalg.matrix_rank(theta_t)
    if rank < basis.K:
        raise InputError(f"basis matrix has rank {rank} < K={basis.K}: sample times "
                         f"({taus.size}, {np.unique(taus).size} distinct) cannot determine "
                         f"the coefficients")
    q, r = scipy.linalg.qr(theta_t, mode="economic")
    n = d.shape[0]
    rhs = np.concatenate([d[..., 0], d[..., 1]], 0).T  # (T, 2N)
    sol = scipy.linalg.solve_triangular(r, q.T @ rhs)  # (K, 2N)
    coef = np.concatenate([sol[:, :n].T, sol[:, n:].T], 1)
    K = basis.K
    fitted = np.stack([coef[:, :K] @ theta_t.T, coef[:, K:] @ theta_t.T], -1)
    resid = np.sqrt(np.mean((fitted - d) ** 2, axis=(1, 2)))
    return coef, resid


def fit_coefficients(basis: MotionBasis, tracks: np.ndarray, times, t0: float, t1: float,
                     origins: np.ndarray | None = None) -> tuple[TrajectoryField, np.ndarray]:
    """Fit a dense field to sampled positions ``tracks`` ``(H, W, T, 2)``.

    ``origins`` ``(H, W, 2)`` are the start positions (default: the pixel grid).
    Returns the field and the per-pixel residual RMS ``(H, W)``.
    """
    tracks = np.asarray(tracks, dtype=np.float64)
    if tracks.ndim != 4 or tracks.shape[3] != 2:
        raise InputError("tracks must be (H, W, T, 2)")
    h, w, n_t, _ = tracks.shape
    if origins is None:
        origins = pixel_grid(h, w)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size != n_t:
        raise InputError("need one time per track sample")
    if np.any(times < t0) or np.any(times > t1) or not t1 > t0:
        raise InputError("sample times must lie inside the span")
    taus = (times - t0) / (t1 - t0)
    disp = (tracks - origins[:, :, None, :]).reshape(h * w, n_t, 2)
    coef, resid = fit_tracks(basis, disp, taus)
    return TrajectoryField(basis, coef.reshape(h, w, -1), t0, t1), resid.reshape(h, w)
