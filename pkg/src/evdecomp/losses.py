"""Robust warping losses, flow regularisers and image quality metrics."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InputError
from .events import Frame
from .warping import backward_warp

__all__ = ["charbonnier", "photometric_loss", "second_differences", "smoothness_loss",
           "l1_flow_loss", "psnr", "ssim", "perceptual_loss", "lpips", "format_report",
           "parse_report", "PSNR_CAP", "CHARB_BETA", "CHARB_EPS"]

CHARB_BETA = 0.45
CHARB_EPS = 1e-3
PSNR_CAP = 99.0


def _arr(img) -> np.ndarray:
    return img.values if isinstance(img, Frame) else np.asarray(img, dtype=np.float64)


def charbonnier(x, eps: float = CHARB_EPS, beta: float = CHARB_BETA) -> float:
    """``mean((x**2 + eps**2) ** beta)``."""
    if not eps > 0:
        raise InputError("eps must be > 0")
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean((x * x + eps * eps) ** beta))


def photometric_loss(i0, it, flow, eps: float = CHARB_EPS, beta: float = CHARB_BETA) -> float:
    """Charbonnier penalty of ``I0 - warp(It, flow)`` over validly warped pixels.

    ``flow`` maps each ``I0`` pixel to its position in ``It``.
    """
    a, b = _arr(i0), _arr(it)
    if a.shape != b.shape:
        raise InputError(f"frame shapes {a.shape} and {b.shape} differ")
    warped, valid = backward_warp(b, flow)
    if not valid.any():
        raise InputError("no pixel warps inside the image")
    return charbonnier((a - warped)[valid], eps, beta)


def second_differences(flow) -> tuple[np.ndarray, np.ndarray]:
    """Second differences along x ``(H, W-2, 2)`` and y ``(H-2, W, 2)``."""
    f = np.asarray(flow, dtype=np.float64)
    dxx = f[:, 2:] - 2.0 * f[:, 1:-1] + f[:, :-2]
    dyy = f[2:] - 2.0 * f[1:-1] + f[:-2]
    return dxx, dyy


def smoothness_loss(flow) -> float:
    """Mean L2 norm of the flow second differences, averaged over both axes.

    Each flow component is penalised separately; affine flows cost exactly 0.
    """
    f = np.asarray(flow, dtype=np.float64)
    if f.ndim != 3 or f.shape[2] != 2 or min(f.shape[:2]) < 3:
        raise InputError("flow must be (H>=3, W>=3, 2)")
    dxx, dyy = second_differences(f)
    return float(0.5 * (np.mean(np.abs(dxx)) + np.mean(np.abs(dyy))))


def l1_flow_loss(m, w, mask=None) -> float:
    """Mean over masked pixels of ``|dx| + |dy|`` between two flows."""
    m = np.asarray(m, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if m.shape != w.shape:
        raise InputError("flow shapes differ")
    mask = np.ones(m.shape[:2], bool) if mask is None else np.asarray(mask, bool)
    if not mask.any():
        raise InputError("empty mask")
    return float(np.mean(np.abs(m - w).sum(-1)[mask]))


def psnr(pred, gt, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at ``PSNR_CAP`` for exact matches."""
    a, b = _arr(pred), _arr(gt)
    if a.shape != b.shape:
        raise InputError(f"frame shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def ssim(pred, gt, window: int = 11, k1: float = 0.01, k2: float = 0.03,
         peak: float = 1.0) -> float:
    """Mean SSIM with a Gaussian window (sigma 1.5, truncated to ``window``).

    Colour frames are averaged over channels.
    """
    a, b = _arr(pred), _arr(gt)
    if a.shape != b.shape:
        raise InputError(f"frame shapes {a.shape} and {b.shape} differ")
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], window, k1, k2, peak)
                              for c in range(a.shape[2])]))
    sigma = 1.5
    trunc = ((window - 1) / 2) / sigma

    def blur(v):
        return gaussian_filter(v, sigma, truncate=trunc, mode="reflect")

    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a, mu_b = blur(a), blur(b)
    saa = blur(a * a) - mu_a ** 2
    sbb = blur(b * b) - mu_b ** 2
    sab = blur(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))
    return float(np.mean(s))


def perceptual_loss(*args, **kwargs):
    raise NotImplementedError("perceptual loss needs pretrained deep features; not provided")


def lpips(*args, **kwargs):
    raise NotImplementedError("LPIPS needs pretrained deep features; not provided")


def format_report(metrics: dict, per_frame: list[dict] | None = None) -> str:
    """Line-oriented ``name=value`` text; per-frame blocks are prefixed ``frame.<i>.``.

    Floats are written with ``repr`` so reports round-trip bit for bit.
    """
    lines = []
    for i, row in enumerate(per_frame or []):
        for k, v in row.items():
            lines.append(f"frame.{i}.{k}={_fmt(v)}")
    for k, v in metrics.items():
        lines.append(f"{k}={_fmt(v)}")
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"malformed report line {line!r}")
        k, v = line.split("=", 1)
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v
    return out
