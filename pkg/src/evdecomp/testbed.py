"""Analytic synthetic scenes with exact frames, flow and trajectories.

Pixel ``(x, y)`` samples the continuous scene at the point ``(x, y)``.  Every
scene is a rigid motion ``phi_t`` of a fixed texture ``T``:
``I(p, t) = T(phi_t^{-1}(p))``, so ground-truth flow and tracks are closed
form.  Intensities stay inside [0.05, 0.95].
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import InputError
from .events import FrameSequence

__all__ = ["SceneSpec", "render", "ground_truth_flow", "ground_truth_tracks", "SCENE_KINDS",
           "default_scene"]

SCENE_KINDS = ("translating_gaussian", "rotating_checkerboard", "sinusoidal_grating_on_curved_path")

# supersampling offsets for the checkerboard (4x4 per pixel)
_SS = (np.arange(4) + 0.5) / 4 - 0.5


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "translating_gaussian"
    width: int = 64
    height: int = 64
    duration: float = 0.5
    # translation (px/s) for the gaussian and grating scenes
    velocity: tuple[float, float] = (12.0, -6.0)
    # rotation (rad/s) about `center` (default: image centre)
    angular_rate: float = 0.6
    center: tuple[float, float] | None = None
    # curved path: y offset amplitude (px) and frequency (Hz)
    amplitude: float = 3.0
    frequency: float = 1.0
    # texture
    blob_sigma: float = 2.0
    blob_density: float = 0.06
    square: float = 8.0
    grating_periods: tuple[float, float] = (9.0, 13.0)
    contrast: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise InputError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        if not self.duration > 0:
            raise InputError("duration must be positive")
        if self.width < 4 or self.height < 4:
            raise InputError("scene needs at least 4x4 pixels")
        if not 0 < self.contrast <= 0.9:
            raise InputError("contrast must lie in (0, 0.9]")
        for name in ("velocity", "grating_periods"):
            v = tuple(float(a) for a in getattr(self, name))
            if len(v) != 2:
                raise InputError(f"{name} needs two values")
            object.__setattr__(self, name, v)
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(a) for a in self.center))

    @property
    def rotation_center(self) -> tuple[float, float]:
        if self.center is not None:
            return self.center
        return ((self.width - 1) / 2, (self.height - 1) / 2)

    def to_config(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(float(a)) for a in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config(cls, kv: dict | str) -> "SceneSpec":
        if isinstance(kv, str):
            kv = dict(ln.split("=", 1) for ln in kv.splitlines()
                      if "=" in ln and not ln.lstrip().startswith("#"))
        types = {f.name: f for f in fields(cls)}
        args = {}
        for k, v in kv.items():
            k, v = k.strip(), str(v).strip()
            if k not in types:
                raise InputError(f"unknown scene key {k!r}")
            if k == "kind":
                args[k] = v
            elif k in ("width", "height", "seed"):
                args[k] = int(v)
            elif k in ("velocity", "grating_periods", "center"):
                args[k] = tuple(float(a) for a in v.split(","))
            else:
                args[k] = float(v)
        return cls(**args)


def default_scene(kind: str, **overrides) -> SceneSpec:
    return replace(SceneSpec(kind=kind), **overrides)


def _offset(spec: SceneSpec, t):
    """Texture translation at time ``t`` for the translating scenes, ``(..., 2)``."""
    t = np.asarray(t, dtype=np.float64)
    vx, vy = spec.velocity
    if spec.kind == "translating_gaussian":
        return np.stack([vx * t, vy * t], -1)
    return np.stack([vx * t, vy * t + spec.amplitude * np.sin(2 * np.pi * spec.frequency * t)], -1)


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _blobs(spec: SceneSpec):
    rng = np.random.default_rng(spec.seed)
    # texture must cover the frame for every offset reached within the duration
    reach = np.abs(spec.velocity) * spec.duration + 4 * spec.blob_sigma
    x0, x1 = -reach[0], spec.width + reach[0]
    y0, y1 = -reach[1] - spec.amplitude, spec.height + reach[1] + spec.amplitude
    n = max(1, int(round(spec.blob_density * (x1 - x0) * (y1 - y0))))
    cx = rng.uniform(x0, x1, n)
    cy = rng.uniform(y0, y1, n)
    amp = rng.choice([-1.0, 1.0], n) * rng.uniform(0.8, 1.6, n)
    return cx, cy, amp


def _texture(spec: SceneSpec, x: np.ndarray, y: np.ndarray, cache: dict) -> np.ndarray:
    """Texture value at texture-space coordinates."""
    half = spec.contrast / 2
    if spec.kind == "translating_gaussian":
        if "blobs" not in cache:
            cache["blobs"] = _blobs(spec)
        cx, cy, amp = cache["blobs"]
        s = np.zeros(x.shape)
        inv = 1.0 / (2 * spec.blob_sigma ** 2)
        for i in range(cx.size):
            s += amp[i] * np.exp(-((x - cx[i]) ** 2 + (y - cy[i]) ** 2) * inv)
        return 0.5 + half * np.tanh(s)
    if spec.kind == "rotating_checkerboard":
        if "levels" not in cache:
            cache["levels"] = np.random.default_rng(spec.seed).uniform(-0.3, 0.3, (64, 64))
        i = np.floor(x / spec.square).astype(np.int64)
        j = np.floor(y / spec.square).astype(np.int64)
        parity = ((i + j) % 2) * 2.0 - 1.0
        jitter = cache["levels"][j % 64, i % 64]
        return 0.5 + half * (0.7 * parity + jitter)
    px, py = spec.grating_periods
    a1, a2 = np.deg2rad(30.0), np.deg2rad(110.0)
    k1 = 2 * np.pi / px * np.array([np.cos(a1), np.sin(a1)])
    k2 = 2 * np.pi / py * np.array([np.cos(a2), np.sin(a2)])
    return 0.5 + half / 2 * (np.sin(k1[0] * x + k1[1] * y + 0.3) + np.sin(k2[0] * x + k2[1] * y + 1.1))


def _to_texture(spec: SceneSpec, x: np.ndarray, y: np.ndarray, t: float):
    """``phi_t^{-1}``: image-space points at time ``t`` to texture space."""
    if spec.kind == "rotating_checkerboard":
        cx, cy = spec.rotation_center
        r = _rot(-spec.angular_rate * t)
        dx, dy = x - cx, y - cy
        return cx + r[0, 0] * dx + r[0, 1] * dy, cy + r[1, 0] * dx + r[1, 1] * dy
    o = _offset(spec, t)
    return x - o[0], y - o[1]


def _check_times(spec: SceneSpec, times) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if np.any(times < 0) or np.any(times > spec.duration):
        raise InputError(f"times must lie in [0, {spec.duration}]")
    return times


def render(spec: SceneSpec, times) -> FrameSequence:
    """Frames at ``times`` plus the exact flow of frame 0's pixels to each time."""
    times = _check_times(spec, times)
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    cache: dict = {}
    frames = []
    for t in times:
        if spec.kind == "rotating_checkerboard":
            acc = np.zeros(xx.shape)
            for oy in _SS:
                for ox in _SS:
                    acc += _texture(spec, *_to_texture(spec, xx + ox, yy + oy, t), cache)
            frames.append(acc / _SS.size ** 2)
        else:
            frames.append(_texture(spec, *_to_texture(spec, xx, yy, t), cache))
    flows = [ground_truth_flow(spec, times[0], t) for t in times]
    return FrameSequence(np.stack(frames), times, np.stack(flows))


def _displace(spec: SceneSpec, px: np.ndarray, py: np.ndarray, t0: float, t: float):
    if t == t0:
        return np.zeros(px.shape), np.zeros(py.shape)
    if spec.kind == "rotating_checkerboard":
        cx, cy = spec.rotation_center
        r = _rot(spec.angular_rate * (t - t0))
        dx, dy = px - cx, py - cy
        return cx + r[0, 0] * dx + r[0, 1] * dy - px, cy + r[1, 0] * dx + r[1, 1] * dy - py
    d = _offset(spec, t) - _offset(spec, t0)
    return np.full(px.shape, d[0]), np.full(py.shape, d[1])


def ground_truth_flow(spec: SceneSpec, t0: float, t: float) -> np.ndarray:
    """Displacement ``(H, W, 2)`` carrying each pixel at ``t0`` to its position at ``t``."""
    _check_times(spec, [t0, t])
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    dx, dy = _displace(spec, xx, yy, t0, t)
    return np.stack([dx, dy], -1)


def ground_truth_tracks(spec: SceneSpec, pixels, times, t0: float | None = None) -> np.ndarray:
    """Positions ``(N, T, 2)`` of the points at ``pixels`` ``(N, 2)`` at time ``t0``.

    ``t0`` defaults to ``times[0]``.
    """
    times = _check_times(spec, times)
    t0 = times[0] if t0 is None else float(t0)
    _check_times(spec, [t0])
    p = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    out = np.empty((p.shape[0], times.size, 2))
    for j, t in enumerate(times):
        dx, dy = _displace(spec, p[:, 0], p[:, 1], t0, t)
        out[:, j, 0] = p[:, 0] + dx
        out[:, j, 1] = p[:, 1] + dy
    return out
