"""Bilinear backward warping, softmax forward splatting and image pyramids.

Flows are ``(H, W, 2)`` arrays holding ``(dx, dy)``.  Images may be
``(H, W)`` or ``(H, W, C)`` arrays, or :class:`~evdecomp.events.Frame`.
"""
from __future__ import annotations

import numpy as np

from .errors import InputError
from .events import Frame

__all__ = ["backward_warp", "softmax_splat", "splat_pyramid", "build_pyramid", "downscale2",
           "central_gradients", "DEN_EPS"]

DEN_EPS = 1e-6


def _unwrap(image):
    if isinstance(image, Frame):
        return image.values, image.timestamp
    return np.asarray(image, dtype=np.float64), None


def _check_flow(flow, shape):
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != tuple(shape[:2]) + (2,):
        raise InputError(f"flow shape {flow.shape} does not match image {shape[:2]}")
    return flow


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``img`` at real coordinates clamped to the image; ``(..., C?)``."""
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1)
    y = np.clip(y, 0.0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    return (img[y0, x0] * ((1 - fx) * (1 - fy)) + img[y0, x1] * (fx * (1 - fy))
            + img[y1, x0] * ((1 - fx) * fy) + img[y1, x1] * (fx * fy))


def backward_warp(image, flow):
    """``out[p] = image(p + flow[p])`` by bilinear interpolation.

    Samples outside the image are clamped to the border and reported as
    ``False`` in the returned validity mask.
    """
    img, ts = _unwrap(image)
    flow = _check_flow(flow, img.shape)
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    sx = xx + flow[..., 0]
    sy = yy + flow[..., 1]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    out = bilinear_sample(img, sx, sy)
    if ts is not None:
        return Frame(np.maximum(out, 0.0), ts), valid
    return out, valid


def _splat_targets(flow: np.ndarray):
    """Target indices and bilinear weights, ordered pixel-major then corner.

    Corners are visited in the order (x0,y0), (x1,y0), (x0,y1), (x1,y1).
    Returns flat target index (-1 when outside) and weight, both ``(H*W*4,)``.
    """
    h, w = flow.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    tx = (xx + flow[..., 0]).reshape(-1)
    ty = (yy + flow[..., 1]).reshape(-1)
    x0 = np.floor(tx)
    y0 = np.floor(ty)
    fx = tx - x0
    fy = ty - y0
    cx = np.stack([x0, x0 + 1, x0, x0 + 1], 1)
    cy = np.stack([y0, y0, y0 + 1, y0 + 1], 1)
    wb = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], 1)
    inside = (cx >= 0) & (cx <= w - 1) & (cy >= 0) & (cy <= h - 1)
    idx = np.where(inside, cy * w + cx, -1).astype(np.int64)
    return idx.reshape(-1), wb.reshape(-1)


def softmax_splat(source, flow, Z, den_eps: float = DEN_EPS):
    """Forward-warp ``source`` along ``flow`` with softmax weights ``exp(Z)``.

    Every source pixel deposits ``exp(Z) * value`` and ``exp(Z)`` into the four
    bilinear neighbours of ``p + flow[p]``; deposits landing outside the image
    are dropped.  Returns ``(out, coverage)`` where ``out`` is the weighted
    mean (0 where coverage <= ``den_eps``) and ``coverage`` the total weight.
    The mean is formed with ``exp(Z - Zmax)``, ``Zmax`` the largest weight
    reaching the target, which cancels in the ratio but avoids overflow and
    keeps single-source targets exact.  Accumulation runs sequentially in
    row-major source order, corners in the order of ``_splat_targets``.
    """
    src, ts = _unwrap(source)
    flow = _check_flow(flow, src.shape)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape != src.shape[:2]:
        raise InputError(f"Z shape {Z.shape} does not match source {src.shape[:2]}")
    if not np.all(np.isfinite(Z)) or not np.all(np.isfinite(flow)):
        raise InputError("Z and flow must be finite")
    h, w = src.shape[:2]
    idx, wb = _splat_targets(flow)
    zrep = np.repeat(Z.reshape(-1), 4)
    keep = (idx >= 0) & (wb > 0)
    idx, wb, zrep = idx[keep], wb[keep], zrep[keep]
    n = h * w
    cov = np.bincount(idx, weights=wb * np.exp(zrep), minlength=n)
    # blend with weights relative to the largest Z reaching each target: a
    # lone deposit then has weight exactly 1 and is copied without rounding
    zmax = np.full(n, -np.inf)
    np.maximum.at(zmax, idx, zrep)
    wt = wb * np.exp(zrep - zmax[idx])
    den = np.bincount(idx, weights=wt, minlength=n)
    vals = src.reshape(n, -1)
    vrep = np.repeat(vals, 4, axis=0)[keep]
    num = np.stack([np.bincount(idx, weights=wt * vrep[:, c], minlength=n)
                    for c in range(vals.shape[1])], 1)
    covered = cov > den_eps
    out = np.zeros_like(num)
    out[covered] = num[covered] / den[covered, None]
    out = out.reshape(src.shape)
    cov = np.where(covered, cov, 0.0).reshape(h, w)
    if ts is not None:
        return Frame(np.maximum(out, 0.0), ts), cov
    return out, cov


def downscale2(a: np.ndarray) -> np.ndarray:
    """2x2 mean pooling over the first two axes (odd trailing row/col dropped)."""
    a = np.asarray(a, dtype=np.float64)
    h, w = a.shape[0] // 2, a.shape[1] // 2
    if h < 1 or w < 1:
        raise InputError("image too small to downscale")
    a = a[:2 * h, :2 * w]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def central_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with edge replication, ``(d/dx, d/dy)``."""
    p = np.pad(img, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def build_pyramid(image, levels: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Image pyramid and hand-crafted feature pyramid.

    Level 0 is the input; each further level is a 2x2 mean of the previous.
    Features per level are ``[intensity, d/dx, d/dy]`` (``(h, w, 3)``), with
    intensity the luminance for colour input.
    """
    img, _ = _unwrap(image)
    if levels < 1:
        raise InputError("levels must be >= 1")
    images = [img]
    for _ in range(levels - 1):
        images.append(downscale2(images[-1]))
    feats = []
    for im in images:
        lum = im if im.ndim == 2 else im @ np.array([0.299, 0.587, 0.114])
        gx, gy = central_gradients(lum)
        feats.append(np.stack([lum, gx, gy], -1))
    return images, feats


def splat_pyramid(pyramid, flow, Z, den_eps: float = DEN_EPS):
    """Splat each level with the flow/weights downscaled to that level.

    Level ``l`` uses ``flow`` mean-pooled ``l`` times and scaled by ``2**-l``,
    and ``Z`` mean-pooled ``l`` times.  Returns ``(warped, coverages)`` lists.
    """
    flow = np.asarray(flow, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    warped, covs = [], []
    f, z = flow, Z
    for level, src in enumerate(pyramid):
        if level:
            f = downscale2(f) * 0.5
            z = downscale2(z)
        f_l = f[:src.shape[0], :src.shape[1]]
        z_l = z[:src.shape[0], :src.shape[1]]
        out, cov = softmax_splat(src, f_l, z_l, den_eps)
        warped.append(out)
        covs.append(cov)
    return warped, covs
