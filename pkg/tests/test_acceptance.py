"""Acceptance criteria 1-10, one PASS/FAIL line each (shown in the terminal summary)."""
import time

import numpy as np
import pytest

import scenario
from evdecomp.correlation import (argmax_flow, build_correlation, extract_features,
                                  iterative_refine, pool_correlation)
from evdecomp.events import ContrastThresholds, EventStream, log_intensity, simulate_events
from evdecomp.integrator import estimate_contrast, latent_frames
from evdecomp.kplanes import KPlaneField, fit as kplane_fit, render_frame
from evdecomp.losses import charbonnier, l1_flow_loss, psnr, smoothness_loss, ssim
from evdecomp.pipeline import DecompressionConfig, Decompressor
from evdecomp.testbed import SCENE_KINDS, default_scene, render
from evdecomp.trajectory import (MotionBasis, TrajectoryField, eval_trajectory, fit_coefficients,
                                 pixel_grid, trajectories_matrix)
from evdecomp.voxel import build_volume
from evdecomp.warping import softmax_splat

from test_correlation import shifted_pair
from test_kplanes import finite_difference_check, separable_target, toy_field
from test_warping import splat_oracle


def record(acceptance, n, title, checks, seconds, budget):
    """``checks`` maps a description to a bool; the runtime budget is one more check."""
    checks = dict(checks)
    checks[f"runtime {seconds:.2f} s < {budget} s"] = seconds < budget
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    detail = "; ".join(checks) if ok else "failed: " + "; ".join(failed)
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    acceptance[n] = line
    print(line)
    assert ok, line


def test_01_round_trip(acceptance):
    start = time.perf_counter()
    th = ContrastThresholds(0.2, 0.2)
    worst = {}
    for kind in SCENE_KINDS:
        frames = render(default_scene(kind, width=64, height=64, duration=0.5),
                        np.linspace(0.0, 0.5, 101))
        stream = simulate_events(frames, th)
        lat = latent_frames(frames[0], stream, frames.times, th)
        worst[kind] = max(np.abs(log_intensity(a.values) - log_intensity(b.values)).max()
                          for a, b in zip(lat, frames))
    bound = 0.2 + 1e-9
    checks = {f"{k} max |dlog| {v:.6f} < {bound}": v < bound for k, v in worst.items()}
    record(acceptance, 1, "simulator/integrator round trip", checks,
           time.perf_counter() - start, 5)


def test_02_calibration(acceptance):
    start = time.perf_counter()
    frames = render(default_scene("translating_gaussian"), np.linspace(0.0, 0.25, 26))
    fs = list(frames)
    pairs = list(zip(fs[:-1], fs[1:]))
    checks = {}
    for c in [(0.2, 0.2), (0.25, 0.15)]:
        est = estimate_contrast(pairs, simulate_events(frames, ContrastThresholds(*c)))
        err = max(abs(est.c_pos - c[0]), abs(est.c_neg - c[1]))
        checks[f"{c} error {err:.1e} < 1e-6"] = err < 1e-6
    record(acceptance, 2, "contrast calibration", checks, time.perf_counter() - start, 2)


def random_stream(rng, n, t0=0.0, t1=1.0, w=8, h=6):
    t = np.sort(rng.uniform(t0, t1, n))
    return EventStream(t, rng.integers(0, w, n), rng.integers(0, h, n), rng.choice([-1, 1], n),
                       w, h, t0, t1)


def merge(a, b):
    order = np.argsort(np.concatenate([a.t, b.t]), kind="stable")
    cat = lambda k: np.concatenate([getattr(a, k), getattr(b, k)])[order]  # noqa: E731
    return EventStream(cat("t"), cat("x"), cat("y"), cat("p"), a.width, a.height,
                       a.t_begin, a.t_end)


def test_03_voxel_properties(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    mass = lin = shift = 0.0
    for _ in range(100):
        a = random_stream(rng, int(rng.integers(1, 400)))
        b = random_stream(rng, int(rng.integers(1, 400)))
        bins = int(rng.integers(1, 61))
        va = build_volume(a, 0.0, 1.0, bins)
        npos = np.sum(a.p > 0)
        mass = max(mass, abs(va.data[0].sum() - npos) / max(npos, 1))
        vab = build_volume(merge(a, b), 0.0, 1.0, bins)
        lin = max(lin, np.abs(vab.data - va.data - build_volume(b, 0.0, 1.0, bins).data).max())
        d = float(rng.uniform(-5, 5))
        moved = EventStream(a.t + d, a.x, a.y, a.p, a.width, a.height, d, 1.0 + d)
        shift = max(shift, np.abs(build_volume(moved, d, 1.0 + d, bins).data - va.data).max())
    checks = {f"mass conservation rel err {mass:.1e} <= 1e-9": mass <= 1e-9,
              f"linearity err {lin:.1e} <= 1e-9": lin <= 1e-9,
              f"time-shift covariance err {shift:.1e} <= 1e-9": shift <= 1e-9}
    record(acceptance, 3, "voxel properties on 100 random streams", checks,
           time.perf_counter() - start, 5)


def test_04_trajectory_exactness(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_sq = worst_poly = 0.0
    for kind in ("polynomial", "cosine"):
        for K in range(1, 7):
            basis = MotionBasis(kind, K)
            truth = TrajectoryField(basis, rng.normal(size=(5, 6, 2 * K)), 0.0, 1.0)
            times = np.sort(rng.choice(np.arange(1, 100), K, replace=False)) / 100
            tracks = trajectories_matrix(truth, pixel_grid(5, 6).reshape(-1, 2).astype(int), times)
            _, resid = fit_coefficients(basis, tracks.reshape(5, 6, K, 2), times, 0.0, 1.0)
            worst_sq = max(worst_sq, resid.max())
    for degree in range(1, 6):
        c = rng.normal(size=(2, degree))
        times = np.linspace(0.05, 1.0, 15)
        d = np.stack([sum(c[a, k] * times ** (k + 1) for k in range(degree)) for a in range(2)], -1)
        tracks = pixel_grid(3, 3)[:, :, None, :] + d
        _, resid = fit_coefficients(MotionBasis("polynomial", 5), tracks, times, 0.0, 1.0)
        worst_poly = max(worst_poly, resid.max())
    fld = TrajectoryField(MotionBasis("cosine", 5), rng.normal(size=(8, 9, 10)), 1.0, 2.0)
    pix = pixel_grid(8, 9).reshape(-1, 2).astype(int)
    times = np.linspace(1.0, 2.0, 11)
    mat = trajectories_matrix(fld, pix, times)
    bitwise = all(np.array_equal(mat[n, j], eval_trajectory(fld, tuple(p), t))
                  for n, p in enumerate(pix) for j, t in enumerate(times))
    checks = {f"|T|=K residual {worst_sq:.1e} < 1e-9": worst_sq < 1e-9,
              f"polynomial degree<=K residual {worst_poly:.1e} < 1e-9": worst_poly < 1e-9,
              "matrix == pointwise bitwise": bitwise}
    record(acceptance, 4, "trajectory exactness", checks, time.perf_counter() - start, 2)


def test_05_kplanes(acceptance):
    start = time.perf_counter()
    grad = max(finite_difference_check(toy_field(), "l2"),
               finite_difference_check(toy_field(hidden=4, seed=1), "l2"))
    _, seq = separable_target()
    fld = KPlaneField.create(features=1, n_scales=1, spatial_res=(16, 16), temporal_res=8)
    kplane_fit(fld, seq, steps=2000)
    fit_db = min(psnr(render_frame(fld, t, 16, 16).values, f.values)
                 for t, f in zip(seq.times, seq))
    checks = {f"gradient max rel err {grad:.1e} < 1e-4": grad < 1e-4,
              f"separable fit worst-frame PSNR {fit_db:.2f} >= 40 dB in 2000 steps": fit_db >= 40}
    record(acceptance, 5, "K-plane correctness", checks, time.perf_counter() - start, 60)


def test_06_splatting(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    equal = 0
    for _ in range(50):
        h, w = rng.integers(2, 10, 2)
        src = rng.uniform(size=(h, w, int(rng.integers(1, 4))))
        flow = rng.uniform(-3, 3, (h, w, 2))
        Z = rng.normal(size=(h, w))
        out, cov = softmax_splat(src, flow, Z)
        ref, rcov = splat_oracle(src, flow, Z)
        equal += np.array_equal(out, ref) and np.array_equal(cov, rcov)
    img = rng.uniform(size=(16, 16))
    flow = np.zeros((16, 16, 2))
    flow[..., 0], flow[..., 1] = 3, 1
    out, _ = softmax_splat(img, flow, rng.normal(size=(16, 16)))
    shifted = np.zeros_like(img)
    shifted[1:, 3:] = img[:-1, :-3]
    cflow = np.zeros((1, 2, 2))
    cflow[0, 0, 0] = 1
    col, _ = softmax_splat(np.array([[0.0, 1.0]]), cflow, np.array([[0.0, np.log(3.0)]]))
    checks = {f"oracle equal {equal}/50": equal == 50,
              "integer shift (+3, +1) exact": np.array_equal(out, shifted),
              f"collision value {float(col[0, 1])!r} == 0.75 (1e-15)": abs(col[0, 1] - 0.75) <= 1e-15}
    record(acceptance, 6, "splatting", checks, time.perf_counter() - start, 5)


def test_07_correlation(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    f1, f2 = rng.normal(size=(4, 4, 8)), rng.normal(size=(4, 4, 8))
    ref = np.zeros((4, 4, 4, 4))
    for i in range(4):
        for j in range(4):
            for k in range(4):
                for l in range(4):
                    acc = 0.0
                    for d in range(8):
                        acc += f1[i, j, d] * f2[k, l, d]
                    ref[i, j, k, l] = acc
    exact = np.array_equal(build_correlation(f1, f2).values, ref)
    a, b = shifted_pair(3, -2)
    flow, _, valid = argmax_flow(build_correlation(extract_features(a), extract_features(b)), 6)
    inner = np.zeros(a.shape, bool)
    inner[8:-8, 8:-8] = True
    m = inner & valid
    hit = np.mean(np.all(flow[m] == [3, -2], -1))
    a, b = shifted_pair(0.5, 0.0)
    vol = build_correlation(extract_features(a), extract_features(b))
    sub = max(np.abs(iterative_refine(np.zeros(a.shape + (2,)), pool_correlation(vol, L), 3)
                     [6:-6, 6:-6] - [0.5, 0.0]).max() for L in (1, 2, 3))
    checks = {"triple-loop oracle equal": exact,
              f"(+3,-2) recovered at {100 * hit:.0f}% of {m.sum()} interior px": hit == 1.0,
              f"(+0.5,0) refine max err {sub:.3f} <= 0.25 px (1-3 levels)": sub <= 0.25}
    record(acceptance, 7, "correlation flow", checks, time.perf_counter() - start, 10)


def test_08_loss_values(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    yy, xx = np.mgrid[0:9, 0:11].astype(float)
    affine = np.stack([0.3 * xx - 0.7 * yy + 2, 1.1 * xx + 0.2 * yy - 4], -1)
    x = rng.uniform(size=(16, 16))
    rho0 = charbonnier(0.0)
    smooth = smoothness_loss(affine)
    l1 = l1_flow_loss(affine + [1.0, 2.0], affine)
    p = psnr(x + 0.1, x)
    s = ssim(x, x)
    checks = {f"rho(0) {rho0!r} == eps^(2 beta)": rho0 == pytest.approx(1e-3 ** 0.9, rel=1e-12),
              f"affine smoothness {smooth:.1e} <= 1e-12": smooth <= 1e-12,
              f"l1 of (1,2) offset {l1!r} == 3 (1e-12)": abs(l1 - 3) <= 1e-12,
              f"PSNR of 0.1 error {p!r} == 20 (1e-9)": abs(p - 20) <= 1e-9,
              f"SSIM(x,x) {s!r} == 1 (1e-12)": abs(s - 1) <= 1e-12}
    record(acceptance, 8, "loss unit values", checks, time.perf_counter() - start, 2)


def test_09_end_to_end(acceptance, scene_data):
    start = time.perf_counter()
    checks = {}
    for kind in SCENE_KINDS:
        frames, stream = scene_data[kind]
        result = scenario.run(frames, stream)
        mean, rows = scenario.evaluate_rows(result, frames)
        t0_db = rows[0]["psnr_fused"]
        later = rows[1:]
        fused = np.mean([r["psnr_fused"] for r in later])
        static = np.mean([r["psnr_static"] for r in later])
        synth = np.mean([r["psnr_synth"] for r in later])
        epe = np.sqrt(np.mean([r["epe_rms"] ** 2 for r in later]))
        checks[f"{kind}: fused {fused:.2f} - static {static:.2f} >= 6 dB"] = fused - static >= 6
        checks[f"{kind}: endpoint RMS {epe:.3f} < 1 px"] = epe < 1
        checks[f"{kind}: t_begin {t0_db:.1f} >= 60 dB"] = t0_db >= 60
        if kind == "rotating_checkerboard":
            checks[f"{kind}: fused {fused:.2f} > integration-only {synth:.2f}"] = fused > synth
        text = scenario.report(result, frames)
        checks[f"{kind}: golden metrics bitwise"] = text == scenario.golden_path(kind).read_text()
    record(acceptance, 9, "end to end on 0.25 s clips", checks, time.perf_counter() - start, 120)


def test_10_amortisation(acceptance, scene_data):
    frames, stream = scene_data["rotating_checkerboard"]
    cfg = scenario.config()
    costs = {}
    start = time.perf_counter()
    for n in (4, 32):
        t = time.perf_counter()
        Decompressor(frames[0], stream, cfg).run(np.linspace(0.0, scenario.WINDOW, n))
        costs[n] = time.perf_counter() - t
    ratio = costs[32] / costs[4]
    checks = {f"32 queries {costs[32]:.2f} s / 4 queries {costs[4]:.2f} s = {ratio:.2f} < 4":
              ratio < 4}
    record(acceptance, 10, "amortised queries", checks, time.perf_counter() - start, 60)
