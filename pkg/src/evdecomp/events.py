"""Event data model, per-pixel brightness integration and a frame-driven
event simulator.

Conventions used throughout the package:

* pixel coordinates are ``(x, y)`` = (column, row), 0-based;
* image arrays are ``(height, width)`` or ``(height, width, 3)``;
* event windows are half-open ``[t0, t1)``, except that a window whose end
  reaches the stream's ``t_end`` also includes events stamped exactly at
  ``t_end``.  Adjacent windows therefore partition the stream, and the last
  window closes it (the same rule ``numpy.histogram`` uses for its last bin).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "Event",
    "EventStream",
    "ContrastThresholds",
    "Frame",
    "FrameSequence",
    "window_mask",
    "event_counts",
    "integrate_pixel",
    "integrate_events",
    "simulate_events",
    "log_intensity",
    "DEFAULT_LOG_EPS",
]

DEFAULT_LOG_EPS = 1e-3


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: float
    polarity: int

    def __post_init__(self):
        if self.polarity not in (1, -1):
            raise InputError(f"polarity must be +1 or -1, got {self.polarity}")
        if self.x < 0 or self.y < 0 or self.t < 0:
            raise InputError(f"invalid event {self}")


@dataclass(frozen=True)
class ContrastThresholds:
    """Log-intensity step per positive / negative event.

    ``defaulted`` names a threshold that calibration could not observe and
    copied from the other one; it is informational and ignored by ``==``.
    """

    c_pos: float = 0.2
    c_neg: float = 0.2
    defaulted: str | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("c_pos", "c_neg"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise InputError(f"{name} must be finite and > 0, got {v}")
            object.__setattr__(self, name, v)

    @property
    def max(self) -> float:
        return max(self.c_pos, self.c_neg)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class EventStream:
    """Time-sorted events on a ``width x height`` sensor over ``[t_begin, t_end]``.

    Stored as parallel numpy arrays (``t`` float64, ``x``/``y`` int64,
    ``p`` int8).  Instances are immutable.
    """

    __slots__ = ("t", "x", "y", "p", "width", "height", "t_begin", "t_end")

    def __init__(self, t, x, y, p, width: int, height: int,
                 t_begin: float | None = None, t_end: float | None = None):
        t = np.array(t, dtype=np.float64).reshape(-1)
        x = np.array(x, dtype=np.int64).reshape(-1)
        y = np.array(y, dtype=np.int64).reshape(-1)
        p = np.array(p).reshape(-1)
        n = t.size
        if not (x.size == y.size == p.size == n):
            raise InputError("event arrays must have equal length")
        width, height = int(width), int(height)
        if width < 1 or height < 1:
            raise InputError("sensor geometry must be positive")
        if n:
            if not np.all(np.isfinite(t)):
                raise InputError("event timestamps must be finite")
            if np.any(np.diff(t) < 0):
                raise InputError("events must be sorted by time")
            if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
                raise InputError("event coordinates outside sensor geometry")
            if not np.all((p == 1) | (p == -1)):
                raise InputError("polarities must be +1 or -1")
        if t_begin is None:
            t_begin = float(t[0]) if n else 0.0
        if t_end is None:
            t_end = float(t[-1]) if n else float(t_begin)
        t_begin, t_end = float(t_begin), float(t_end)
        if t_end < t_begin:
            raise InputError("t_end precedes t_begin")
        if n and (t[0] < t_begin or t[-1] > t_end):
            raise InputError("events outside [t_begin, t_end]")
        set_ = object.__setattr__
        set_(self, "t", _readonly(t))
        set_(self, "x", _readonly(x))
        set_(self, "y", _readonly(y))
        set_(self, "p", _readonly(p.astype(np.int8)))
        set_(self, "width", width)
        set_(self, "height", height)
        set_(self, "t_begin", t_begin)
        set_(self, "t_end", t_end)

    def __setattr__(self, name, value):
        raise AttributeError("EventStream is immutable")

    @classmethod
    def from_events(cls, events: Sequence[Event], width: int, height: int,
                    t_begin: float | None = None, t_end: float | None = None) -> "EventStream":
        return cls([e.t for e in events], [e.x for e in events], [e.y for e in events],
                   [e.polarity for e in events], width, height, t_begin, t_end)

    @classmethod
    def empty(cls, width: int, height: int, t_begin: float = 0.0, t_end: float = 0.0):
        return cls([], [], [], [], width, height, t_begin, t_end)

    def __len__(self) -> int:
        return int(self.t.size)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), int(self.p[i]))

    def __repr__(self):
        return (f"EventStream(n={len(self)}, {self.width}x{self.height}, "
                f"span=[{self.t_begin}, {self.t_end}])")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def mask(self, t0: float, t1: float) -> np.ndarray:
        return window_mask(self.t, t0, t1, self.t_end)

    def slice(self, t0: float, t1: float) -> "EventStream":
        """Sub-stream of the window ``[t0, t1)`` (closed at the stream end)."""
        m = self.mask(t0, t1)
        return EventStream(self.t[m], self.x[m], self.y[m], self.p[m], self.width,
                           self.height, t0, t1)

    def shifted(self, dt: float) -> "EventStream":
        return EventStream(self.t + dt, self.x, self.y, self.p, self.width, self.height,
                           self.t_begin + dt, self.t_end + dt)

    def merged(self, other: "EventStream") -> "EventStream":
        if self.shape != other.shape:
            raise InputError("cannot merge streams of different geometry")
        t = np.concatenate([self.t, other.t])
        order = np.argsort(t, kind="stable")
        return EventStream(t[order], np.concatenate([self.x, other.x])[order],
                           np.concatenate([self.y, other.y])[order],
                           np.concatenate([self.p, other.p])[order], self.width, self.height,
                           min(self.t_begin, other.t_begin), max(self.t_end, other.t_end))


def window_mask(t: np.ndarray, t0: float, t1: float, t_end: float | None = None) -> np.ndarray:
    """Membership of timestamps in ``[t0, t1)``, closed at ``t1 >= t_end``."""
    if t0 > t1:
        raise InputError(f"window start {t0} after end {t1}")
    m = (t >= t0) & (t < t1)
    if t_end is not None and t1 >= t_end:
        m |= (t >= t0) & (t == t1)
    return m


@dataclass(frozen=True)
class Frame:
    """Linear-intensity image, ``(H, W)`` grayscale or ``(H, W, 3)`` color."""

    values: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 3 and v.shape[2] == 1:
            v = v[..., 0]
        if v.ndim not in (2, 3) or (v.ndim == 3 and v.shape[2] != 3):
            raise InputError(f"frame must be HxW or HxWx3, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise InputError("empty frame")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InputError("frame values must be finite and non-negative")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.values.ndim == 2 else 3

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    def luminance(self) -> np.ndarray:
        if self.channels == 1:
            return self.values
        return self.values @ np.array([0.299, 0.587, 0.114])


class FrameSequence:
    """Timestamped frames sharing one geometry, plus optional ground-truth flow.

    ``flows[i]`` (when present) is the forward displacement of every pixel of
    frame 0 at ``times[i]``, shape ``(H, W, 2)`` with ``(dx, dy)`` last.
    """

    def __init__(self, frames, times, flows=None):
        if isinstance(frames, (list, tuple)) and frames and isinstance(frames[0], Frame):
            frames = np.stack([f.values for f in frames])
        data = np.array(frames, dtype=np.float64)
        times = np.array(times, dtype=np.float64).reshape(-1)
        if data.ndim not in (3, 4) or data.shape[0] != times.size:
            raise InputError("frames must be (N,H,W[,3]) with one timestamp per frame")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise InputError("frame values must be finite and non-negative")
        self.frames = _readonly(data)
        self.times = _readonly(times)
        if flows is not None:
            flows = np.array(flows, dtype=np.float64)
            if flows.shape != data.shape[:3] + (2,):
                raise InputError("flows must be (N,H,W,2)")
            flows = _readonly(flows)
        self.flows = flows

    def __len__(self):
        return self.times.size

    def __getitem__(self, i) -> Frame:
        return Frame(self.frames[i], self.times[i])

    def __iter__(self) -> Iterator[Frame]:
        for i in range(len(self)):
            yield self[i]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:3]


def log_intensity(values: np.ndarray, log_eps: float = DEFAULT_LOG_EPS) -> np.ndarray:
    if log_eps <= 0:
        raise InputError("log_eps must be > 0")
    return np.log(np.asarray(values, dtype=np.float64) + log_eps)


def event_counts(stream: EventStream, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel (positive, negative) event counts in the window, as int grids."""
    m = stream.mask(t0, t1)
    idx = stream.y[m] * stream.width + stream.x[m]
    pos = stream.p[m] > 0
    n = stream.width * stream.height
    npos = np.bincount(idx[pos], minlength=n).reshape(stream.shape)
    nneg = np.bincount(idx[~pos], minlength=n).reshape(stream.shape)
    return npos, nneg


def integrate_events(stream: EventStream, t0: float, t1: float,
                     thresholds: ContrastThresholds) -> np.ndarray:
    """Signed log-brightness change ``c_pos*N+ - c_neg*N-`` for every pixel."""
    npos, nneg = event_counts(stream, t0, t1)
    return thresholds.c_pos * npos - thresholds.c_neg * nneg


def integrate_pixel(stream: EventStream, x: int, y: int, t0: float, t1: float,
                    thresholds: ContrastThresholds) -> float:
    if not (0 <= x < stream.width and 0 <= y < stream.height):
        raise InputError(f"pixel ({x}, {y}) outside {stream.width}x{stream.height}")
    m = stream.mask(t0, t1) & (stream.x == x) & (stream.y == y)
    npos = int(np.count_nonzero(stream.p[m] > 0))
    nneg = int(np.count_nonzero(m)) - npos
    return thresholds.c_pos * npos - thresholds.c_neg * nneg


def simulate_events(frames: FrameSequence, thresholds: ContrastThresholds,
                    log_eps: float = DEFAULT_LOG_EPS) -> EventStream:
    """Generate events from a grayscale video by threshold crossings.

    Log intensity is interpolated linearly between consecutive frames.  Each
    pixel keeps a reference level, initialised to its first-frame value;
    whenever the signal reaches ``ref + c_pos`` (``ref - c_neg``) an event is
    emitted at the interpolated crossing time and the reference moves by
    exactly one threshold.  Output is sorted by time, ties in row-major pixel
    order, then emission order.
    """
    if frames.frames.ndim != 3:
        raise InputError("simulate_events needs grayscale frames (N,H,W)")
    if len(frames) < 2:
        raise InputError("need at least two frames")
    times = frames.times
    if np.any(np.diff(times) <= 0):
        raise InputError("frame timestamps must be strictly increasing")
    h, w = frames.shape
    logs = log_intensity(frames.frames.reshape(len(frames), -1), log_eps)
    ref = logs[0].copy()
    c_pos, c_neg = thresholds.c_pos, thresholds.c_neg

    ts, idxs, ps = [], [], []
    for k in range(len(frames) - 1):
        la, lb = logs[k], logs[k + 1]
        ta, dt = times[k], times[k + 1] - times[k]
        slope = lb - la
        for sign, c in ((1, c_pos), (-1, c_neg)):
            while True:
                target = ref + sign * c
                hit = np.flatnonzero(lb >= target) if sign > 0 else np.flatnonzero(lb <= target)
                if hit.size == 0:
                    break
                frac = (target[hit] - la[hit]) / slope[hit]
                ts.append(ta + np.clip(frac, 0.0, 1.0) * dt)
                idxs.append(hit)
                ps.append(np.full(hit.size, sign, dtype=np.int8))
                ref[hit] = target[hit]

    if not ts:
        return EventStream.empty(w, h, times[0], times[-1])
    t = np.concatenate(ts)
    idx = np.concatenate(idxs)
    p = np.concatenate(ps)
    order = np.lexsort((np.arange(t.size), idx, t))
    t, idx, p = t[order], idx[order], p[order]
    return EventStream(t, idx % w, idx // w, p, w, h, times[0], times[-1])
