"""
Continuous trajectories from a few samples
==========================================

Every pixel's path is a combination of K shared functions of time.  Fitting
the coefficients to a few measured positions gives positions at any time.
"""
import numpy as np

from evdecomp import MotionBasis, eval_flow_field, fit_coefficients
from evdecomp.testbed import default_scene, ground_truth_tracks
from evdecomp.trajectory import pixel_grid, trajectories_matrix

spec = default_scene("sinusoidal_grating_on_curved_path")
grid = pixel_grid(spec.height, spec.width)

# eight anchor samples of the exact tracks
anchors = np.linspace(0.25 / 8, 0.25, 8)
tracks = ground_truth_tracks(spec, grid.reshape(-1, 2), anchors, t0=0.0)
tracks = tracks.reshape(spec.height, spec.width, 8, 2)

for kind in ("polynomial", "cosine"):
    fld, resid = fit_coefficients(MotionBasis(kind, 5), tracks, anchors, 0.0, 0.25)
    # evaluate between the anchors and compare with the closed form
    t = 0.1
    truth = ground_truth_tracks(spec, [[10, 20]], [t], t0=0.0)[0, 0]
    got = eval_flow_field(fld, t)[20, 10] + [10, 20]
    print(f"{kind:10s} fit rms {resid.mean():.2e}  error at t={t}: {np.abs(got - truth).max():.2e} px")

# the matrix form X = Lambda @ Theta gives all pixels at all times at once
X = trajectories_matrix(fld, [[0, 0], [63, 63]], np.linspace(0, 0.25, 5))
print("two tracks, five times:\n", np.round(X, 3))
