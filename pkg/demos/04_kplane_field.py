"""
A factorised video field
========================

Three feature planes (xy, xt, yt) are sampled bilinearly, multiplied, and
decoded linearly.  Fit one to a short clip by plain gradient descent.
"""
import numpy as np

from evdecomp import FrameSequence, KPlaneField, psnr
from evdecomp.kplanes import fit, query, render_frame
from evdecomp.testbed import default_scene, render

spec = default_scene("translating_gaussian", width=32, height=32, blob_sigma=3.0)
clip = render(spec, np.linspace(0, 0.25, 9))
taus = (clip.times - clip.times[0]) / (clip.times[-1] - clip.times[0])
target = FrameSequence(clip.frames, taus)

fld = KPlaneField.create(features=8, n_scales=2, spatial_res=(32, 32), temporal_res=9)
fld.bias[:] = clip.frames.mean() - 1.0
fld, trace = fit(fld, target, steps=400, step_size=(10.0, 0.1))
print(f"loss {trace[0]:.4f} -> {trace[-1]:.5f}")

for i in range(0, len(clip), 2):
    img = render_frame(fld, taus[i], 32, 32).values
    print(f"tau={taus[i]:.3f}  PSNR {psnr(img, clip.frames[i]):.2f} dB")

# the field is continuous: query between the training frames
print("value at (0.5, 0.5, tau=0.0625):", query(fld, [0.5, 0.5, 0.0625]))
