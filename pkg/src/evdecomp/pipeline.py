"""Single frame + events -> frames at arbitrary times.

Two paths are computed per query time and blended:

* warp path: the initial frame's image pyramid is forward-splatted along a
  continuous trajectory field ``M(t)``.  The field is fitted once to latent
  flows measured at anchor times between the initial frame and frames
  decoded from the events.
* synthesis path: events integrated onto the initial frame (or a K-plane
  field fitted to the latent frames).

Fitting happens once in :meth:`Decompressor.fit`; queries afterwards only
evaluate ``M(t)``, splat and blend, so extra query times are cheap.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

from .correlation import (FeatureCorrelation, FeaturePyramid, argmax_flow, extract_features,
                          iterative_refine, seeded_argmax)
from .errors import InputError
from .events import (DEFAULT_LOG_EPS, ContrastThresholds, EventStream, Frame, FrameSequence)
from .integrator import direct_integration, estimate_contrast
from .kplanes import KPlaneField, fit as kplane_fit, render_frame
from .losses import format_report, psnr, ssim
from .trajectory import MotionBasis, TrajectoryField, eval_flow_field, fit_coefficients
from .voxel import EventVolume, build_volume, normalize_volume
from .warping import build_pyramid, central_gradients, splat_pyramid

__all__ = ["DecompressionConfig", "DecompressionResult", "Decompressor", "decompress", "fuse",
           "evaluate", "regularize_flow", "DEFAULT_THRESHOLD"]

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.2


@dataclass(frozen=True)
class DecompressionConfig:
    """Pipeline settings; ``thresholds`` is a pair, ``"auto"`` or ``None``.

    ``"auto"`` calibrates from the frame pairs handed to :func:`decompress`;
    ``None`` uses those pairs when given and ``DEFAULT_THRESHOLD`` otherwise.
    """

    thresholds: ContrastThresholds | str | None = None
    log_eps: float = DEFAULT_LOG_EPS
    bins: int = 60
    K: int = 5
    basis: str = "polynomial"
    anchors: int = 8
    levels: int = 3
    synthesis: str = "integration"
    sharpness: float = 10.0
    c0: float = 0.5
    # latent flow
    patch_radius: int = 3
    max_disp: int = 6
    seed_radius: int = 3
    refine_steps: int = 3
    refine_radius: int = 2
    reg_sigma: float = 8.0
    # splat weights Z = z_scale * |grad| / max |grad|
    z_scale: float = 1.0
    # extra synthesis preference where M(t) and the latent flow disagree (per px^2)
    consistency_weight: float = 0.0
    # project warp frames into the intensity interval the events allow
    event_clamp: bool = True
    # synthesis preference per threshold of violation (3x3 max-filtered)
    violation_weight: float = 10.0
    kplane_steps: int = 300
    # plane rate; each plane cell sees few samples, so it runs far above the decoder's 0.1
    kplane_rate: float = 10.0
    times: tuple[float, ...] | None = None
    seq: bool = True

    def __post_init__(self):
        if self.synthesis not in ("integration", "kplane_fit"):
            raise InputError(f"unknown synthesis mode {self.synthesis!r}")
        if self.anchors < 1 or self.K < 1 or self.levels < 1 or self.bins < 1:
            raise InputError("anchors, K, levels and bins must be >= 1")
        if isinstance(self.thresholds, str) and self.thresholds != "auto":
            raise InputError("thresholds must be a pair, 'auto' or unset")
        if self.anchors < self.K:
            logger.warning("anchors (%d) < K (%d): trajectory fit is underdetermined",
                           self.anchors, self.K)
        if self.times is not None:
            object.__setattr__(self, "times", tuple(float(t) for t in self.times))

    @classmethod
    def from_config(cls, kv: dict) -> "DecompressionConfig":
        known = {f.name: f for f in fields(cls)}
        args = {}
        for k, v in kv.items():
            if k in ("c_pos", "c_neg"):
                continue
            if k not in known:
                raise InputError(f"unknown config key {k!r}")
            v = str(v).strip()
            if k == "thresholds":
                if v == "auto":
                    args[k] = "auto"
                else:
                    a = [float(s) for s in v.split(",")]
                    args[k] = ContrastThresholds(a[0], a[-1])
            elif k == "times":
                args[k] = tuple(float(s) for s in v.split(",") if s.strip())
            elif k in ("basis", "synthesis"):
                args[k] = v
            elif k in ("seq", "event_clamp"):
                args[k] = v.lower() in ("1", "true", "yes")
            elif known[k].type in ("int", int):
                args[k] = int(v)
            else:
                args[k] = float(v)
        if "c_pos" in kv or "c_neg" in kv:
            c_pos = float(kv.get("c_pos", kv.get("c_neg")))
            c_neg = float(kv.get("c_neg", kv.get("c_pos")))
            args["thresholds"] = ContrastThresholds(c_pos, c_neg)
        return cls(**args)


@dataclass
class DecompressionResult:
    times: np.ndarray
    fused: FrameSequence
    warp: FrameSequence
    synth: FrameSequence
    flows: np.ndarray  # (N, H, W, 2) M(t)
    latent_flows: np.ndarray  # (N, H, W, 2) anchor flows interpolated to t
    coverage: np.ndarray  # (N, H, W)
    thresholds: ContrastThresholds
    trajectory: TrajectoryField
    anchor_times: np.ndarray
    anchor_flows: np.ndarray
    fit_residual: np.ndarray  # (H, W) RMS of the trajectory fit to the anchor flows
    timing: dict = field(default_factory=dict)

    def save(self, out_dir, fmt: str | None = None) -> Path:
        """Frames, flows, coefficients and a ``key=value`` summary.

        Timing is left out so repeated runs write identical bytes.
        """
        from . import io

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        io.write_frames(out, self.fused, fmt, "fused")
        io.write_frames(out, self.warp, fmt, "warp", "manifest_warp.txt")
        io.write_frames(out, self.synth, fmt, "synth", "manifest_synth.txt")
        for i, f in enumerate(self.flows):
            io.write_flow(out / f"flow_{i:05d}.flo", f)
        io.write_trajectory(out / "trajectory.trj", self.trajectory)
        summary = {"c_pos": self.thresholds.c_pos, "c_neg": self.thresholds.c_neg,
                   "defaulted": self.thresholds.defaulted or "none",
                   "anchor_times": ",".join(repr(float(t)) for t in self.anchor_times),
                   "fit_residual_rms": float(np.sqrt(np.mean(self.fit_residual ** 2)))}
        rows = [{"t": float(t), "mean_coverage": float(np.mean(c)),
                 "uncovered_fraction": float(np.mean(c == 0)),
                 "max_displacement": float(np.max(np.hypot(f[..., 0], f[..., 1])))}
                for t, c, f in zip(self.times, self.coverage, self.flows)]
        (out / "report.txt").write_text(format_report(summary, rows))
        return out


def fuse(warp_frame, coverage, synth_frame, synth_confidence=0.0, sharpness: float = 10.0,
         c0: float = 0.5):
    """Per pixel ``w = sigmoid(sharpness * (coverage - c0 - synth_confidence))``,
    ``out = w * warp + (1 - w) * synth``; ``w = 0`` where coverage is 0.

    Accepts arrays or :class:`Frame` (returns the same kind as ``synth_frame``).
    """
    wv = warp_frame.values if isinstance(warp_frame, Frame) else np.asarray(warp_frame, float)
    sv = synth_frame.values if isinstance(synth_frame, Frame) else np.asarray(synth_frame, float)
    cov = np.asarray(coverage, dtype=np.float64)
    if wv.shape != sv.shape or cov.shape != wv.shape[:2]:
        raise InputError("warp, synth and coverage shapes differ")
    if np.any(cov < 0):
        raise InputError("coverage must be non-negative")
    z = sharpness * (cov - c0 - np.asarray(synth_confidence, dtype=np.float64))
    w = np.where(cov > 0, 0.5 * (1.0 + np.tanh(0.5 * z)), 0.0)
    if wv.ndim == 3:
        w = w[..., None]
    out = w * wv + (1.0 - w) * sv
    if isinstance(synth_frame, Frame):
        return Frame(np.maximum(out, 0.0), synth_frame.timestamp)
    return out


def regularize_flow(flow: np.ndarray, confidence: np.ndarray, sigma: float) -> np.ndarray:
    """Confidence-weighted local affine fit of a flow field.

    At every pixel, fits ``a + b*x + c*y`` per component by least squares
    with weights ``confidence * gaussian(sigma)``; affine fields are
    reproduced exactly wherever the weights span the plane.
    """
    flow = np.asarray(flow, dtype=np.float64)
    h, w = flow.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # centred coordinates keep the 3x3 systems well conditioned
    xx -= (w - 1) / 2
    yy -= (h - 1) / 2
    basis = (np.ones((h, w)), xx, yy)

    def blur(a):
        return gaussian_filter(a, sigma, mode="constant")

    a = np.empty((h, w, 3, 3))
    b = np.empty((h, w, 3, 2))
    for i in range(3):
        for j in range(i, 3):
            a[..., i, j] = a[..., j, i] = blur(confidence * basis[i] * basis[j])
        for c in range(2):
            b[..., i, c] = blur(confidence * basis[i] * flow[..., c])
    scale = np.maximum(a[..., 0, 0], 1e-300)[..., None, None]
    a = a / scale + 1e-9 * np.eye(3)
    sol = np.linalg.solve(a, b / scale)
    out = sol[..., 0, :] + xx[..., None] * sol[..., 1, :] + yy[..., None] * sol[..., 2, :]
    weak = blur(confidence) <= 1e-12
    return np.where(weak[..., None], flow, out)


def _structure_confidence(lum: np.ndarray) -> np.ndarray:
    """Smaller eigenvalue of the structure tensor, scaled to max 1."""
    gx, gy = central_gradients(gaussian_filter(lum, 1.0))
    jxx = gaussian_filter(gx * gx, 2.0)
    jyy = gaussian_filter(gy * gy, 2.0)
    jxy = gaussian_filter(gx * gy, 2.0)
    lmin = 0.5 * (jxx + jyy - np.sqrt((jxx - jyy) ** 2 + 4 * jxy ** 2))
    lmin = np.maximum(lmin, 0.0)
    top = lmin.max()
    return lmin / top if top > 0 else lmin


def _resize_up(a: np.ndarray, factor: int, shape) -> np.ndarray:
    up = np.repeat(np.repeat(a, factor, 0), factor, 1)
    out = np.zeros(tuple(shape) + a.shape[2:])
    hh, ww = min(shape[0], up.shape[0]), min(shape[1], up.shape[1])
    out[:hh, :ww] = up[:hh, :ww]
    return out


class Decompressor:
    """Fit once from ``initial`` + ``stream``, then query any time in the span."""

    def __init__(self, initial: Frame, stream: EventStream,
                 config: DecompressionConfig | None = None, frame_pairs=None):
        self.config = config or DecompressionConfig()
        if initial.shape != stream.shape:
            raise InputError(f"initial frame {initial.shape} and stream {stream.shape} differ")
        if abs(initial.timestamp - stream.t_begin) > 1e-12:
            raise InputError(f"initial frame timestamp {initial.timestamp} != stream start "
                             f"{stream.t_begin}")
        if not stream.t_end > stream.t_begin:
            raise InputError("event stream has an empty time span")
        self.initial = initial
        self.stream = stream
        self.frame_pairs = frame_pairs
        self.fitted = False
        self.fit_seconds = 0.0

    # ------------------------------------------------------------ fitting
    def _thresholds(self) -> ContrastThresholds:
        cfg = self.config.thresholds
        if isinstance(cfg, ContrastThresholds):
            return cfg
        if self.frame_pairs:
            return estimate_contrast(self.frame_pairs, self.stream, self.config.log_eps)
        if cfg == "auto":
            raise InputError("thresholds=auto needs calibration frame pairs")
        return ContrastThresholds(DEFAULT_THRESHOLD, DEFAULT_THRESHOLD)

    def _latent_flows(self, lum0: np.ndarray, latents: list[np.ndarray]) -> np.ndarray:
        cfg = self.config
        f0 = extract_features(lum0, cfg.patch_radius)
        conf_struct = _structure_confidence(lum0)
        h, w = lum0.shape
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        flows = []
        prev, prev_tau = None, None
        for tau, lat in zip(self.anchor_taus, latents):
            fk = extract_features(lat, cfg.patch_radius)
            pyr = FeaturePyramid(f0, fk, cfg.levels)
            if prev is None:
                flow, _, _ = argmax_flow(FeatureCorrelation(f0, fk), cfg.max_disp)
            else:
                # constant-velocity prediction from the previous anchor
                flow, _ = seeded_argmax(pyr, prev * (tau / prev_tau), cfg.seed_radius)
            flow = iterative_refine(flow, pyr, cfg.refine_steps, cfg.refine_radius)
            score = pyr.lookup(0, (xx + flow[..., 0])[..., None], (yy + flow[..., 1])[..., None])
            conf = conf_struct * np.clip(score[..., 0], 0.0, 1.0) ** 4
            flow = regularize_flow(flow, conf, cfg.reg_sigma)
            flows.append(flow)
            prev, prev_tau = flow, tau
        return np.stack(flows)

    def fit(self) -> "Decompressor":
        start = time.perf_counter()
        cfg = self.config
        s = self.stream
        self.thresholds = self._thresholds()
        self.lum0 = self.initial.luminance()
        gray0 = Frame(self.lum0, self.initial.timestamp)
        span = s.t_end - s.t_begin
        self.anchor_taus = np.arange(1, cfg.anchors + 1) / cfg.anchors
        self.anchor_times = s.t_begin + self.anchor_taus * span
        self.anchor_times[-1] = s.t_end
        latents = [direct_integration(gray0, s, t, self.thresholds, cfg.log_eps).values
                   for t in self.anchor_times]
        self.anchor_flows = self._latent_flows(self.lum0, latents)
        h, w = self.lum0.shape
        grid = np.stack(np.meshgrid(np.arange(w), np.arange(h)), -1).astype(np.float64)
        tracks = grid[:, :, None, :] + np.moveaxis(self.anchor_flows, 0, 2)
        self.trajectory, self.fit_residual = fit_coefficients(
            MotionBasis(cfg.basis, cfg.K), tracks, self.anchor_times, s.t_begin, s.t_end)
        self.images, _ = build_pyramid(self.initial, cfg.levels)
        gx, gy = central_gradients(self.lum0)
        mag = np.hypot(gx, gy)
        self.Z = cfg.z_scale * mag / mag.max() if mag.max() > 0 else np.zeros_like(mag)
        self.kplanes = None
        if cfg.synthesis == "kplane_fit":
            seq = FrameSequence([gray0] + [Frame(l, t) for l, t in zip(latents, self.anchor_times)],
                                np.concatenate([[s.t_begin], self.anchor_times]))
            fld = KPlaneField.create(features=4, n_scales=2, spatial_res=(w, h),
                                     temporal_res=max(cfg.anchors + 1, 2))
            # planes start near 1 and decode to ~1; start from the mean intensity instead
            fld.bias[:] = seq.frames.mean() - 1.0
            self.kplanes, self.kplane_trace = kplane_fit(
                fld, seq, "l2", cfg.kplane_steps, (cfg.kplane_rate, 0.1),
                span=(s.t_begin, s.t_end))
        self.fitted = True
        self.fit_seconds = time.perf_counter() - start
        return self

    def volumes(self) -> tuple[EventVolume, EventVolume]:
        """Unnormalised (synthesis) and max-abs normalised (motion) event volumes
        over the whole span."""
        s = self.stream
        v = build_volume(s, s.t_begin, np.nextafter(s.t_end, np.inf), self.config.bins)
        return v, normalize_volume(v)

    # ------------------------------------------------------------ queries
    def _check_time(self, t: float):
        if not self.stream.t_begin <= t <= self.stream.t_end:
            raise InputError(f"query time {t} outside [{self.stream.t_begin}, {self.stream.t_end}]")

    def latent_flow(self, t: float) -> np.ndarray:
        """Anchor flows linearly interpolated in time (zero at the start)."""
        times = np.concatenate([[self.stream.t_begin], self.anchor_times])
        flows = np.concatenate([np.zeros((1,) + self.anchor_flows.shape[1:]), self.anchor_flows])
        k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
        a = (t - times[k]) / (times[k + 1] - times[k])
        return (1 - a) * flows[k] + a * flows[k + 1]

    def _synth(self, t: float) -> np.ndarray:
        cfg = self.config
        if self.kplanes is not None:
            s = self.stream
            tau = (t - s.t_begin) / (s.t_end - s.t_begin)
            lum = render_frame(self.kplanes, tau, self.lum0.shape[1], self.lum0.shape[0]).values
        else:
            gray0 = Frame(self.lum0, self.initial.timestamp)
            lum = direct_integration(gray0, self.stream, t, self.thresholds, cfg.log_eps).values
        if self.initial.channels == 1:
            return lum
        # chroma held from the initial frame: scale every channel by the luminance gain
        gain = (lum + cfg.log_eps) / (self.lum0 + cfg.log_eps)
        return np.clip(self.initial.values * gain[..., None], 0.0, 1.0)

    def _warp(self, flow: np.ndarray):
        warped, covs = splat_pyramid(self.images, flow, self.Z)
        out = warped[0].copy()
        cov = covs[0].copy()
        shape = out.shape[:2]
        # fill level-0 cracks from the coarser levels
        for level in range(1, len(warped)):
            hole = cov <= 0
            if not hole.any():
                break
            up = _resize_up(warped[level], 2 ** level, shape)
            cup = _resize_up(covs[level], 2 ** level, shape)
            fill = hole & (cup > 0)
            out[fill] = up[fill]
            cov[fill] = cup[fill]
        return np.clip(out, 0.0, None), cov

    def _event_bounds(self, t: float):
        """Interval of linear intensities consistent with the events up to ``t``.

        After integration the log level sits at the pixel's event reference,
        and no further event fired, so the true log intensity lies within
        ``(-c_neg, +c_pos)`` of it.
        """
        cfg = self.config
        gray0 = Frame(self.lum0, self.initial.timestamp)
        lum = direct_integration(gray0, self.stream, t, self.thresholds, cfg.log_eps).values
        base = lum + cfg.log_eps
        lo = base * np.exp(-self.thresholds.c_neg) - cfg.log_eps
        hi = base * np.exp(self.thresholds.c_pos) - cfg.log_eps
        return lo, hi

    def _clamp_to_events(self, warp: np.ndarray, t: float):
        """Project ``warp`` into the event interval; also return the violation
        (log distance outside the interval, in thresholds) per pixel."""
        cfg = self.config
        lo, hi = self._event_bounds(t)
        lum = warp if warp.ndim == 2 else warp @ np.array([0.299, 0.587, 0.114])
        clamped = np.clip(lum, lo, hi)
        violation = np.abs(np.log(lum + cfg.log_eps) - np.log(clamped + cfg.log_eps))
        violation /= max(self.thresholds.c_pos, self.thresholds.c_neg)
        if warp.ndim == 2:
            return clamped, violation
        gain = np.where(lum > 0, clamped / np.maximum(lum, 1e-12), 1.0)
        return warp * gain[..., None], violation

    def query(self, t: float) -> dict:
        if not self.fitted:
            self.fit()
        self._check_time(t)
        start = time.perf_counter()
        cfg = self.config
        flow = eval_flow_field(self.trajectory, t)
        warp, cov = self._warp(flow)
        latent = self.latent_flow(t)
        conf = cfg.consistency_weight * np.sum((flow - latent) ** 2, -1)
        if cfg.event_clamp:
            warp, violation = self._clamp_to_events(warp, t)
            conf = conf + cfg.violation_weight * maximum_filter(violation, 3)
        synth = self._synth(t)
        fused = fuse(warp, cov, synth, conf, cfg.sharpness, cfg.c0)
        return {"t": float(t), "fused": np.clip(fused, 0.0, None), "warp": warp, "synth": synth,
                "flow": flow, "latent_flow": latent, "coverage": cov,
                "seconds": time.perf_counter() - start}

    def run(self, times) -> DecompressionResult:
        if not self.fitted:
            self.fit()
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if times.size == 0:
            raise InputError("no query times")
        rows = [self.query(t) for t in times]

        def seq(key):
            return FrameSequence([Frame(r[key], r["t"]) for r in rows], times)

        timing = {"fit_seconds": self.fit_seconds,
                  "query_seconds": [r["seconds"] for r in rows]}
        timing["total_seconds"] = self.fit_seconds + sum(timing["query_seconds"])
        return DecompressionResult(
            times=times, fused=seq("fused"), warp=seq("warp"), synth=seq("synth"),
            flows=np.stack([r["flow"] for r in rows]),
            latent_flows=np.stack([r["latent_flow"] for r in rows]),
            coverage=np.stack([r["coverage"] for r in rows]),
            thresholds=self.thresholds, trajectory=self.trajectory,
            anchor_times=self.anchor_times.copy(), anchor_flows=self.anchor_flows.copy(),
            fit_residual=self.fit_residual.copy(), timing=timing)


def decompress(initial: Frame, stream: EventStream, config: DecompressionConfig | None = None,
               times=None, frame_pairs=None) -> DecompressionResult:
    """Fit and query in one call; ``times`` overrides ``config.times``."""
    config = config or DecompressionConfig()
    if times is None:
        times = config.times
    if times is None:
        raise InputError("no query times given")
    return Decompressor(initial, stream, config, frame_pairs).run(times)


def _crop(a: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return a
    return a[border:-border, border:-border]


def evaluate(result: DecompressionResult, ground_truth: FrameSequence, mask_border: int = 2,
             initial: Frame | None = None) -> tuple[dict, list[dict]]:
    """PSNR/SSIM of the fused, warp and synthesis frames against ``ground_truth``.

    Ground-truth frames are matched by timestamp.  With ``initial`` the
    static baseline (initial frame held) is scored too; with ground-truth
    flows (relative to the initial time) the endpoint RMS error of ``M(t)``
    is reported over pixels whose true target lies inside the image.
    Returns ``(mean metrics, per-frame metrics)``.
    """
    gt_times = ground_truth.times
    per_frame = []
    for i, t in enumerate(result.times):
        j = np.flatnonzero(np.abs(gt_times - t) <= 1e-9)
        if j.size == 0:
            raise InputError(f"no ground-truth frame at t={t!r}")
        j = int(j[0])
        gt = _crop(ground_truth.frames[j], mask_border)
        row = {"t": float(t)}
        for name, seq in (("fused", result.fused), ("warp", result.warp),
                          ("synth", result.synth)):
            pred = _crop(seq.frames[i], mask_border)
            row[f"psnr_{name}"] = psnr(pred, gt)
            row[f"ssim_{name}"] = ssim(pred, gt)
        if initial is not None:
            base = _crop(initial.values, mask_border)
            row["psnr_static"] = psnr(base, gt)
            row["ssim_static"] = ssim(base, gt)
        if ground_truth.flows is not None:
            gtf = ground_truth.flows[j]
            h, w = gtf.shape[:2]
            yy, xx = np.mgrid[0:h, 0:w]
            tx, ty = xx + gtf[..., 0], yy + gtf[..., 1]
            valid = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
            valid = _crop(valid, mask_border)
            err = _crop(np.sum((result.flows[i] - gtf) ** 2, -1), mask_border)
            row["epe_rms"] = float(np.sqrt(np.mean(err[valid]))) if valid.any() else 0.0
        per_frame.append(row)
    keys = [k for k in per_frame[0] if k != "t"]
    mean = {f"mean_{k}": float(np.mean([r[k] for r in per_frame])) for k in keys}
    mean["frames"] = len(per_frame)
    return mean, per_frame


def metrics_report(result: DecompressionResult, ground_truth: FrameSequence,
                   mask_border: int = 2, initial: Frame | None = None) -> str:
    mean, rows = evaluate(result, ground_truth, mask_border, initial)
    return format_report(mean, rows)
