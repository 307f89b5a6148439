"""
Event volumes
=============

Bin a stream into a spatiotemporal histogram with linear kernels in time.
"""
import numpy as np

from evdecomp import ContrastThresholds, build_volume, normalize_volume, simulate_events
from evdecomp.testbed import default_scene, render

frames = render(default_scene("rotating_checkerboard"), np.linspace(0, 0.25, 51))
stream = simulate_events(frames, ContrastThresholds(0.2, 0.2))

# 60 bins over the window; each event splits its unit mass between the two
# nearest bins.  The last window of a stream includes its end point.
vol = build_volume(stream, stream.t_begin, stream.t_end, 60)
print("volume", vol.data.shape, "positive mass", vol.data[0].sum(), "events",
      int(np.sum(stream.p > 0)))

# activity over time: edges sweep past pixels at a steady rate
per_bin = vol.data.sum(axis=(0, 2, 3))
print("events per bin (first 10):", np.round(per_bin[:10], 1))

# scale to max |value| = 1 before handing to a motion estimator
norm = normalize_volume(vol)
print("normalised max", np.abs(norm.data).max())

# a single signed plane is also available
signed = build_volume(stream, stream.t_begin, stream.t_end, 60, polarity_separated=False)
print("signed net change", signed.data.sum())
