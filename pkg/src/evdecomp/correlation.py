"""All-pairs feature correlation, correlation pyramids, argmax matching and
iterative soft-argmax refinement.

Feature grids are ``(H, W, D)``.  ``C[i, j, k, l] = F1[i, j] . F2[k, l]``
correlates a pixel ``(row i, col j)`` of the first image with ``(k, l)`` of
the second, so a flow read off ``C`` maps first-image pixels into the second
image: ``flow[i, j] = (l - j, k - i)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .events import Frame
from .warping import bilinear_sample, central_gradients, downscale2

__all__ = ["CorrelationVolume", "extract_features", "build_correlation", "pool_correlation",
           "argmax_flow", "iterative_refine", "FeatureCorrelation", "VolumePyramid",
           "FeaturePyramid", "displacement_order", "seeded_argmax", "BETA_CORR", "MAX_FULL_SIDE"]

BETA_CORR = 10.0
# full 4-D volumes are only built up to this side length; use FeatureCorrelation beyond
MAX_FULL_SIDE = 128


def extract_features(image, patch_radius: int = 3, flat_tol: float = 1e-6) -> np.ndarray:
    """Zero-mean local patch plus central gradients, scaled to unit norm.

    Descriptor length is ``(2r+1)**2 + 2``; borders are edge-replicated.
    Patches whose zero-mean norm is below ``flat_tol`` map to zero.
    """
    img = image.luminance() if isinstance(image, Frame) else np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img @ np.array([0.299, 0.587, 0.114])
    if patch_radius < 0:
        raise InputError("patch_radius must be >= 0")
    r = patch_radius
    h, w = img.shape
    p = np.pad(img, r, mode="edge")
    patches = np.stack([p[dy:dy + h, dx:dx + w] for dy in range(2 * r + 1)
                        for dx in range(2 * r + 1)], -1)
    patches = patches - patches.mean(-1, keepdims=True)
    gx, gy = central_gradients(img)
    desc = np.concatenate([patches, gx[..., None], gy[..., None]], -1)
    norm = np.sqrt(np.sum(patches ** 2, -1) + gx ** 2 + gy ** 2)
    flat = np.sqrt(np.sum(patches ** 2, -1)) < flat_tol
    desc = np.where(flat[..., None], 0.0, desc / np.where(flat, 1.0, norm)[..., None])
    return desc


@dataclass(frozen=True)
class CorrelationVolume:
    values: np.ndarray  # (H, W, H', W')

    @property
    def dims(self):
        return self.values.shape

    def score(self, dy: int, dx: int) -> np.ndarray:
        """``C[i, j, i+dy, j+dx]`` as an ``(H, W)`` grid, ``-inf`` when out of range."""
        h, w, h2, w2 = self.values.shape
        ii, jj = np.mgrid[0:h, 0:w]
        k, l = ii + dy, jj + dx
        ok = (k >= 0) & (k < h2) & (l >= 0) & (l < w2)
        out = np.full((h, w), -np.inf)
        out[ok] = self.values[ii[ok], jj[ok], k[ok], l[ok]]
        return out


def build_correlation(f1: np.ndarray, f2: np.ndarray) -> CorrelationVolume:
    """Exact all-pairs dot products, summed over the feature index in order."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.ndim != 3 or f2.ndim != 3 or f1.shape[2] != f2.shape[2]:
        raise InputError(f"feature grids {f1.shape} and {f2.shape} are incompatible")
    h, w, d = f1.shape
    c = np.zeros((h, w) + f2.shape[:2])
    for k in range(d):
        c += f1[:, :, k, None, None] * f2[None, None, :, :, k]
    return CorrelationVolume(c)


def _pool_last2(v: np.ndarray) -> np.ndarray:
    h2, w2 = v.shape[2] // 2, v.shape[3] // 2
    v = v[:, :, :2 * h2, :2 * w2]
    return 0.25 * (v[:, :, 0::2, 0::2] + v[:, :, 1::2, 0::2] + v[:, :, 0::2, 1::2]
                   + v[:, :, 1::2, 1::2])


def pool_correlation(volume: CorrelationVolume, levels: int) -> list[CorrelationVolume]:
    """Level 0 is ``volume``; each further level 2x2-averages the last two axes."""
    out = [volume]
    for _ in range(levels - 1):
        out.append(CorrelationVolume(_pool_last2(out[-1].values)))
    return out


class FeatureCorrelation:
    """Correlation evaluated on demand from features, for large images.

    Equal (up to rounding) to the corresponding :class:`CorrelationVolume`:
    pooling the volume over ``(k, l)`` is the same as dotting with pooled
    second-image features.
    """

    def __init__(self, f1: np.ndarray, f2: np.ndarray):
        if f1.ndim != 3 or f2.ndim != 3 or f1.shape[2] != f2.shape[2]:
            raise InputError("feature grids are incompatible")
        self.f1 = np.asarray(f1, dtype=np.float64)
        self.f2 = np.asarray(f2, dtype=np.float64)

    @property
    def dims(self):
        return self.f1.shape[:2] + self.f2.shape[:2]

    def score(self, dy: int, dx: int) -> np.ndarray:
        h, w = self.f1.shape[:2]
        h2, w2 = self.f2.shape[:2]
        out = np.full((h, w), -np.inf)
        i0, i1 = max(0, -dy), min(h, h2 - dy)
        j0, j1 = max(0, -dx), min(w, w2 - dx)
        if i1 > i0 and j1 > j0:
            a = self.f1[i0:i1, j0:j1]
            b = self.f2[i0 + dy:i1 + dy, j0 + dx:j1 + dx]
            acc = np.zeros(a.shape[:2])
            for k in range(a.shape[2]):
                acc += a[..., k] * b[..., k]
            out[i0:i1, j0:j1] = acc
        return out


class VolumePyramid:
    """Lookup interface over a list of pooled :class:`CorrelationVolume`."""

    def __init__(self, volumes: list[CorrelationVolume]):
        self.volumes = volumes

    def __len__(self):
        return len(self.volumes)

    def lookup(self, level: int, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
        """Bilinear sample of level ``level`` at per-pixel ``(H, W, n)`` target coords."""
        v = self.volumes[level].values
        h, w, h2, w2 = v.shape
        x = np.clip(cx, 0.0, w2 - 1)
        y = np.clip(cy, 0.0, h2 - 1)
        x0 = np.floor(x).astype(np.int64)
        y0 = np.floor(y).astype(np.int64)
        x1 = np.minimum(x0 + 1, w2 - 1)
        y1 = np.minimum(y0 + 1, h2 - 1)
        fx, fy = x - x0, y - y0
        ii = np.arange(h)[:, None, None]
        jj = np.arange(w)[None, :, None]
        return (v[ii, jj, y0, x0] * (1 - fx) * (1 - fy) + v[ii, jj, y0, x1] * fx * (1 - fy)
                + v[ii, jj, y1, x0] * (1 - fx) * fy + v[ii, jj, y1, x1] * fx * fy)

    def window(self, level: int, cx: np.ndarray, cy: np.ndarray, radius: int) -> np.ndarray:
        """Correlations at ``(cx + ox, cy + oy)`` for integer offsets in ``[-r, r]**2``,
        as ``(H, W, 2r+1, 2r+1)`` indexed ``[.., oy, ox]``."""
        r = np.arange(-radius, radius + 1, dtype=np.float64)
        oy, ox = np.meshgrid(r, r, indexing="ij")
        out = self.lookup(level, cx[..., None] + ox.reshape(-1), cy[..., None] + oy.reshape(-1))
        return out.reshape(cx.shape + (r.size, r.size))


class FeaturePyramid:
    """Lookup interface computing pooled correlations from pooled features."""

    def __init__(self, f1: np.ndarray, f2: np.ndarray, levels: int):
        self.f1 = np.asarray(f1, dtype=np.float64)
        self.levels = [np.asarray(f2, dtype=np.float64)]
        for _ in range(levels - 1):
            self.levels.append(downscale2(self.levels[-1]))

    def __len__(self):
        return len(self.levels)

    def lookup(self, level: int, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
        f2 = self.levels[level]
        h, w, n = cx.shape
        samp = bilinear_sample(f2, cx.reshape(h, -1), cy.reshape(h, -1)).reshape(h, w, n, -1)
        return np.einsum("ijd,ijnd->ijn", self.f1, samp)

    def window(self, level: int, cx: np.ndarray, cy: np.ndarray, radius: int) -> np.ndarray:
        """Correlations at ``(cx + ox, cy + oy)`` for integer offsets in ``[-r, r]**2``.

        Same values as :meth:`lookup` on those points, returned as
        ``(H, W, 2r+1, 2r+1)`` indexed ``[.., oy, ox]``.  All offsets share one
        fractional part, so only ``(2r+2)**2`` integer corners are gathered.
        """
        f2 = self.levels[level]
        h2, w2 = f2.shape[:2]
        x = cx - radius
        y = cy - radius
        x0 = np.floor(x)
        y0 = np.floor(y)
        fx = (x - x0)[..., None, None]
        fy = (y - y0)[..., None, None]
        g = np.arange(2 * radius + 2)
        xi = np.clip(x0[..., None].astype(np.int64) + g, 0, w2 - 1)  # (H, W, G)
        yi = np.clip(y0[..., None].astype(np.int64) + g, 0, h2 - 1)
        flat = f2.reshape(h2 * w2, -1)
        idx = yi[..., :, None] * w2 + xi[..., None, :]  # (H, W, G, G)
        c = np.einsum("ijd,ijabd->ijab", self.f1, flat[idx])
        return (c[..., :-1, :-1] * (1 - fx) * (1 - fy) + c[..., :-1, 1:] * fx * (1 - fy)
                + c[..., 1:, :-1] * (1 - fx) * fy + c[..., 1:, 1:] * fx * fy)


def displacement_order(max_disp: int) -> list[tuple[int, int]]:
    """Window offsets ``(dy, dx)`` by magnitude, then row-major."""
    r = range(-max_disp, max_disp + 1)
    return sorted(((dy, dx) for dy in r for dx in r), key=lambda d: (d[0] ** 2 + d[1] ** 2, d))


def argmax_flow(volume, max_disp: int, valid: np.ndarray | None = None):
    """Best match within a ``(2*max_disp+1)**2`` window for every pixel.

    ``volume`` is a :class:`CorrelationVolume` or :class:`FeatureCorrelation`.
    Ties go to the smaller displacement, then row-major target order.
    Returns ``(flow, score, valid)``; ``valid`` is false where the pixel's own
    correlation row is identically zero (flat descriptor) unless a mask is
    given.  Flow is integer-valued ``(dx, dy)``.
    """
    if max_disp < 0:
        raise InputError("max_disp must be >= 0")
    h, w = volume.dims[:2]
    best = np.full((h, w), -np.inf)
    flow = np.zeros((h, w, 2))
    any_nonzero = np.zeros((h, w), dtype=bool)
    for dy, dx in displacement_order(max_disp):
        s = volume.score(dy, dx)
        any_nonzero |= np.isfinite(s) & (s != 0)
        better = s > best
        best[better] = s[better]
        flow[better] = (dx, dy)
    if valid is None:
        if isinstance(volume, FeatureCorrelation):
            valid = np.any(volume.f1 != 0, -1)
        else:
            valid = any_nonzero
    best = np.where(np.isfinite(best), best, 0.0)
    return flow, best, valid


def seeded_argmax(pyramid, seed: np.ndarray, radius: int):
    """Integer best match within ``radius`` of a per-pixel rounded ``seed`` flow.

    Uses level 0 of a :class:`VolumePyramid` or :class:`FeaturePyramid`.
    Same tie rule as :func:`argmax_flow`, relative to the seed.  Returns
    ``(flow, score)``; targets outside the second image never win.
    """
    if radius < 0:
        raise InputError("radius must be >= 0")
    if isinstance(pyramid, list):
        pyramid = VolumePyramid(pyramid)
    base = np.rint(np.asarray(seed, dtype=np.float64))
    h, w = base.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    order = displacement_order(radius)
    oy = np.array([d[0] for d in order], dtype=np.float64)
    ox = np.array([d[1] for d in order], dtype=np.float64)
    perm = (oy + radius).astype(np.int64) * (2 * radius + 1) + (ox + radius).astype(np.int64)
    cx = (xx + base[..., 0])[..., None] + ox
    cy = (yy + base[..., 1])[..., None] + oy
    h2, w2 = _level_shape(pyramid, 0)
    corr = pyramid.window(0, xx + base[..., 0], yy + base[..., 1], radius).reshape(h, w, -1)[..., perm]
    corr = np.where((cx >= 0) & (cx <= w2 - 1) & (cy >= 0) & (cy <= h2 - 1), corr, -np.inf)
    k = np.argmax(corr, -1)  # first maximum = earliest in displacement order
    flow = base + np.stack([ox[k], oy[k]], -1)
    score = np.take_along_axis(corr, k[..., None], -1)[..., 0]
    return flow, np.where(np.isfinite(score), score, 0.0)


def _level_shape(pyramid, level: int) -> tuple[int, int]:
    if isinstance(pyramid, FeaturePyramid):
        return pyramid.levels[level].shape[:2]
    return pyramid.volumes[level].values.shape[2:]


def _to_level(coord: np.ndarray, level: int) -> np.ndarray:
    # pixel centres: fine x maps to (x + 0.5) / 2**l - 0.5 on level l
    return (coord + 0.5) / 2 ** level - 0.5


def iterative_refine(flow_init: np.ndarray, pyramid, steps: int, radius: int = 2,
                     beta: float = BETA_CORR, normalize: bool = False,
                     return_history: bool = False):
    """Refine a flow by soft-argmax lookups, ``Delta_m = Delta_{m-1} + delta_m``.

    Each step visits the pyramid levels coarse to fine.  At level ``l`` the
    correlations ``c`` at offsets ``d`` in ``[-radius, radius]**2`` around the
    current target (in level units, bilinearly interpolated) are turned into
    weights ``softmax(beta * c)``; with ``normalize`` the logits are
    ``beta * (c - max c) / max(max c - min c, 1/beta)`` so the sharpness does
    not depend on descriptor smoothness.  The weighted mean offset (at most
    ``radius`` per axis) times ``2**l`` is the level's update.

    Averaged coarse levels can lose a sharp peak, so a coarse update is only
    kept where it does not lower the level-0 correlation at the target.

    ``pyramid`` is a :class:`VolumePyramid`, :class:`FeaturePyramid`, or a list
    of volumes from :func:`pool_correlation`.
    """
    if steps < 0:
        raise InputError("steps must be >= 0")
    if isinstance(pyramid, list):
        pyramid = VolumePyramid(pyramid)
    flow = np.array(flow_init, dtype=np.float64)
    h, w = flow.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    oy, ox = np.meshgrid(r, r, indexing="ij")
    ox, oy = ox.reshape(-1), oy.reshape(-1)

    def fine_corr(f):
        return pyramid.lookup(0, (xx + f[..., 0])[..., None], (yy + f[..., 1])[..., None])[..., 0]

    history = []
    for _ in range(steps):
        start = flow
        for level in reversed(range(len(pyramid))):
            cx = _to_level(xx + flow[..., 0], level)
            cy = _to_level(yy + flow[..., 1], level)
            corr = pyramid.window(level, cx, cy, radius).reshape(h, w, -1)
            top = corr.max(-1, keepdims=True)
            if normalize:
                spread = np.maximum(top - corr.min(-1, keepdims=True), 1.0 / beta)
                logits = beta * (corr - top) / spread
            else:
                logits = beta * (corr - top)
            wts = np.exp(logits)
            wts /= wts.sum(-1, keepdims=True)
            delta = np.stack([wts @ ox, wts @ oy], -1) * 2 ** level
            if level:
                keep = fine_corr(flow + delta) >= fine_corr(flow)
                delta = np.where(keep[..., None], delta, 0.0)
            flow = flow + delta
        history.append(flow - start)
    return (flow, history) if return_history else flow
