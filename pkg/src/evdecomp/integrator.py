"""Direct event integration ``L(t) = L(0) * exp(E)`` and contrast calibration."""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .errors import InputError, NumericalError
from .events import (DEFAULT_LOG_EPS, ContrastThresholds, EventStream, Frame, FrameSequence,
                     event_counts, integrate_events, log_intensity)

__all__ = ["direct_integration", "integrate_log_gain", "estimate_contrast", "latent_frames"]

logger = logging.getLogger(__name__)


def _check_geometry(initial: Frame, stream: EventStream):
    if initial.shape != stream.shape:
        raise InputError(f"frame {initial.shape} and stream {stream.shape} geometry differ")


def integrate_log_gain(initial: np.ndarray, log_change: np.ndarray,
                       log_eps: float = DEFAULT_LOG_EPS) -> np.ndarray:
    """Apply a per-pixel log-intensity change to linear intensities.

    Pixels without change are passed through untouched, so an eventless
    window reproduces ``initial`` bit for bit.
    """
    out = np.maximum(0.0, (initial + log_eps) * np.exp(log_change) - log_eps)
    out = np.where(log_change == 0, initial, out)
    return np.clip(out, 0.0, 1.0)


def direct_integration(initial: Frame, stream: EventStream, t: float,
                       thresholds: ContrastThresholds,
                       log_eps: float = DEFAULT_LOG_EPS) -> Frame:
    """Decode the grayscale frame at ``t`` from ``initial`` (taken at ``stream.t_begin``)."""
    if initial.channels != 1:
        raise InputError("direct_integration works on grayscale frames")
    _check_geometry(initial, stream)
    if not stream.t_begin <= t <= stream.t_end:
        raise InputError(f"t={t} outside stream span [{stream.t_begin}, {stream.t_end}]")
    e = integrate_events(stream, stream.t_begin, t, thresholds)
    return Frame(integrate_log_gain(initial.values, e, log_eps), t)


def latent_frames(initial: Frame, stream: EventStream, times: Sequence[float],
                  thresholds: ContrastThresholds,
                  log_eps: float = DEFAULT_LOG_EPS) -> FrameSequence:
    frames = [direct_integration(initial, stream, t, thresholds, log_eps) for t in times]
    return FrameSequence(frames, list(times))


def _event_anchored_rows(frame_pairs, stream: EventStream, log_eps: float):
    """Rows from consecutive events of one pixel.

    Between two consecutive events the reference level moved by exactly one
    threshold of the second event's polarity, so the log-intensity difference
    between the two event times equals ``c_pos`` or ``-c_neg``, free of the
    sub-threshold residual that frame-to-frame differences carry.

    All supplied frames become knots of a piecewise-linear log-intensity
    signal (exact for simulator output when the knots are its frames).  An
    event pair is used only when every knot segment between the two events
    lies inside some frame-pair interval.
    """
    knots = {}
    spans = []
    for fa, fb in frame_pairs:
        if fa.channels != 1 or fb.channels != 1:
            raise InputError("calibration frames must be grayscale")
        for f in (fa, fb):
            knots.setdefault(f.timestamp, f.values)
        spans.append(sorted((fa.timestamp, fb.timestamp)))
    times = np.array(sorted(knots))
    if times.size < 2:
        return np.zeros((0, 2)), np.zeros(0)
    logs = log_intensity(np.stack([knots[t] for t in times]), log_eps).reshape(times.size, -1)
    mids = 0.5 * (times[:-1] + times[1:])
    seg_ok = np.zeros(mids.size, dtype=bool)
    for lo, hi in spans:
        seg_ok |= (mids > lo) & (mids < hi)
    gaps = np.concatenate([[0], np.cumsum(~seg_ok)])

    m = (stream.t >= times[0]) & (stream.t <= times[-1])
    t = stream.t[m]
    pix = stream.y[m] * stream.width + stream.x[m]
    p = stream.p[m]
    seg = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2)
    frac = (t - times[seg]) / (times[seg + 1] - times[seg])
    level = logs[seg, pix] + frac * (logs[seg + 1, pix] - logs[seg, pix])

    order = np.lexsort((np.arange(t.size), t, pix))
    pix, level, p, seg = pix[order], level[order], p[order], seg[order]
    use = (pix[1:] == pix[:-1]) & seg_ok[seg[:-1]] & (gaps[seg[1:] + 1] == gaps[seg[:-1]])
    pol = p[1:][use]
    a = np.stack([(pol > 0).astype(float), -(pol < 0).astype(float)], 1)
    return a, (level[1:] - level[:-1])[use]


def _window_rows(frame_pairs, stream: EventStream, log_eps: float):
    rows, rhs = [], []
    for fa, fb in frame_pairs:
        if fa.channels != 1 or fb.channels != 1:
            raise InputError("calibration frames must be grayscale")
        t0, t1 = sorted((fa.timestamp, fb.timestamp))
        npos, nneg = event_counts(stream, t0, t1)
        d = log_intensity(fb.values, log_eps) - log_intensity(fa.values, log_eps)
        if fb.timestamp < fa.timestamp:
            d = -d
        active = (npos + nneg) > 0
        rows.append(np.stack([npos[active], -nneg[active]], 1).astype(float))
        rhs.append(d[active])
    return np.concatenate(rows), np.concatenate(rhs)


def estimate_contrast(frame_pairs: Sequence[tuple[Frame, Frame]], stream: EventStream,
                      log_eps: float = DEFAULT_LOG_EPS,
                      method: str = "events") -> ContrastThresholds:
    """Least-squares fit of ``(c_pos, c_neg)`` via the 2x2 normal equations.

    ``method="window"`` uses one row per active pixel and frame pair:
    ``dlog = c_pos*N+ - c_neg*N-``.  It is biased by the sub-threshold
    residual left at each frame.  ``method="events"`` (default) uses rows
    between consecutive events of a pixel, which makes it exact on
    noise-free data; the frames are then treated as knots of a piecewise
    linear log-intensity signal.

    When only one polarity is observed the other threshold is copied from the
    solved one and reported in ``defaulted``.
    """
    if not frame_pairs:
        raise InputError("need at least one frame pair")
    for fa, fb in frame_pairs:
        _check_geometry(fa, stream)
        _check_geometry(fb, stream)
    if method == "events":
        a, b = _event_anchored_rows(frame_pairs, stream, log_eps)
    elif method == "window":
        a, b = _window_rows(frame_pairs, stream, log_eps)
    else:
        raise InputError(f"unknown calibration method {method!r}")
    if a.shape[0] == 0 or not np.any(a):
        raise InputError("not enough events in the calibration windows")

    ata = a.T @ a
    atb = a.T @ b
    has = np.abs(a).sum(0) > 0
    defaulted = None
    if has.all() and abs(np.linalg.det(ata)) > 1e-12 * max(1.0, np.abs(ata).max()) ** 2:
        c_pos, c_neg = np.linalg.solve(ata, atb)
    else:
        # rank-deficient: solve the observed polarity alone
        k = int(np.flatnonzero(has)[0])
        c_pos = c_neg = atb[k] / ata[k, k]
        defaulted = "c_neg" if k == 0 else "c_pos"
        logger.warning("only %s events observed; %s defaulted to the solved value",
                       "positive" if k == 0 else "negative", defaulted)
    if not (np.isfinite(c_pos) and np.isfinite(c_neg)) or c_pos <= 0 or c_neg <= 0:
        raise NumericalError(f"calibration produced invalid thresholds ({c_pos}, {c_neg})")
    return ContrastThresholds(float(c_pos), float(c_neg), defaulted)
