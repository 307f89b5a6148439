"""Event volumes: bilinear temporal binning with optional polarity planes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .events import EventStream

__all__ = ["EventVolume", "build_volume", "normalize_volume", "DEFAULT_BINS"]

DEFAULT_BINS = 60


@dataclass(frozen=True)
class EventVolume:
    """``data`` has shape ``(P, B, H, W)``.

    With ``polarity_separated`` plane 0 accumulates +1 events and plane 1 the
    magnitudes of -1 events; otherwise the single plane holds signed sums.
    """

    data: np.ndarray
    window: tuple[float, float]
    polarity_separated: bool = True
    normalized: bool = False

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


def _bin_coords(t: np.ndarray, t0: float, t1: float, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower bin index and fractional weight for each timestamp."""
    u = (t - t0) / (t1 - t0) * (bins - 1)
    u = np.clip(u, 0.0, bins - 1)
    lo = np.floor(u).astype(np.int64)
    lo = np.minimum(lo, bins - 1)
    return lo, u - lo


def build_volume(stream: EventStream, t0: float, t1: float, bins: int = DEFAULT_BINS,
                 polarity_separated: bool = True) -> EventVolume:
    """Accumulate events of ``[t0, t1)`` with the kernel ``max(0, 1 - |a|)``.

    The temporal coordinate of an event is ``(t - t0) / (t1 - t0) * (bins - 1)``
    and its weight is split between the two neighbouring bins.  Coordinates
    are integral, so the spatial kernel is 1 at the event pixel.
    """
    if not t1 > t0:
        raise InputError(f"empty or reversed window [{t0}, {t1})")
    if bins < 1:
        raise InputError("bins must be >= 1")
    m = (stream.t >= t0) & (stream.t < t1)
    t = stream.t[m]
    pix = stream.y[m] * stream.width + stream.x[m]
    p = stream.p[m].astype(np.float64)
    hw = stream.width * stream.height
    lo, frac = _bin_coords(t, t0, t1, bins)
    hi = np.minimum(lo + 1, bins - 1)

    nplanes = 2 if polarity_separated else 1
    if polarity_separated:
        plane = np.where(p > 0, 0, 1)
        mag = np.ones_like(p)
    else:
        plane = np.zeros(p.size, dtype=np.int64)
        mag = p
    size = nplanes * bins * hw
    # lower and upper deposits interleaved per event: fixed summation order
    idx = np.stack([(plane * bins + lo) * hw + pix, (plane * bins + hi) * hw + pix], 1).reshape(-1)
    wts = np.stack([mag * (1.0 - frac), mag * frac], 1).reshape(-1)
    data = np.bincount(idx, weights=wts, minlength=size)
    return EventVolume(data.reshape(nplanes, bins, stream.height, stream.width), (t0, t1),
                       polarity_separated)


def normalize_volume(volume: EventVolume) -> EventVolume:
    """Scale so that ``max |v| == 1``; an all-zero volume is returned as is."""
    peak = np.max(np.abs(volume.data)) if volume.data.size else 0.0
    if peak == 0:
        return volume
    return EventVolume(volume.data / peak, volume.window, volume.polarity_separated, True)
