"""
Decompressing a clip from one frame and its events
==================================================

Fit once, then ask for frames at any time in the window.  Each frame blends
the initial image carried along the fitted trajectories with the events
integrated onto it.
"""
import numpy as np

from evdecomp import ContrastThresholds, DecompressionConfig, Decompressor, simulate_events
from evdecomp.pipeline import evaluate
from evdecomp.testbed import default_scene, render

frames = render(default_scene("rotating_checkerboard"), np.linspace(0, 0.25, 101))
stream = simulate_events(frames, ContrastThresholds(0.2, 0.2))

dec = Decompressor(frames[0], stream, DecompressionConfig(thresholds=ContrastThresholds(0.2, 0.2)))
dec.fit()
print(f"fitted in {dec.fit_seconds:.2f} s, anchors at {np.round(dec.anchor_times, 4)}")

times = frames.times[::10]
result = dec.run(times)
print(f"{len(times)} queries in {sum(result.timing['query_seconds']):.3f} s")

mean, rows = evaluate(result, frames, 2, frames[0])
print(" t      fused  warp   synth  static  flow rms")
for r in rows:
    print(f"{r['t']:.4f} {r['psnr_fused']:6.2f} {r['psnr_warp']:6.2f} {r['psnr_synth']:6.2f} "
          f"{r['psnr_static']:6.2f}  {r['epe_rms']:.3f}")

# the same run from the shell:
#   evdecomp synth-scene --config scene.cfg --fps 400 --duration 0.25 --out gt
#   evdecomp simulate --frames gt/manifest.txt --out events.evs
#   evdecomp decompress --initial gt/manifest.txt --events events.evs --fps 40 --duration 0.25 --out out
#   evdecomp evaluate --pred out/manifest.txt --gt gt/manifest.txt
