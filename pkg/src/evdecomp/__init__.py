"""Continuous video from one frame plus an event stream.

Modules: ``events`` (data model, simulator), ``voxel`` (event volumes),
``integrator`` (direct integration, calibration), ``kplanes`` (factorised
video fields), ``trajectory`` (basis trajectories), ``warping`` (warps and
splatting), ``correlation`` (matching and refinement), ``losses`` (losses
and metrics), ``testbed`` (analytic scenes), ``pipeline`` (end to end) and
``io`` (file formats).
"""
from .errors import EvDecompError, InputError, NumericalError
from .events import (ContrastThresholds, Event, EventStream, Frame, FrameSequence,
                     integrate_pixel, simulate_events)
from .correlation import (argmax_flow, build_correlation, extract_features, iterative_refine,
                          pool_correlation)
from .integrator import direct_integration, estimate_contrast, latent_frames
from .kplanes import KPlaneField
from .losses import charbonnier, psnr, ssim
from .pipeline import (DecompressionConfig, DecompressionResult, Decompressor, decompress,
                       evaluate, fuse)
from .trajectory import MotionBasis, TrajectoryField, eval_flow_field, fit_coefficients
from .voxel import EventVolume, build_volume, normalize_volume
from .warping import backward_warp, softmax_splat

__version__ = "0.1.0"

__all__ = ["EvDecompError", "InputError", "NumericalError", "ContrastThresholds", "Event",
           "EventStream", "Frame", "FrameSequence", "integrate_pixel", "simulate_events",
           "direct_integration", "estimate_contrast", "latent_frames", "DecompressionConfig",
           "DecompressionResult", "Decompressor", "decompress", "evaluate", "fuse",
           "EventVolume", "build_volume", "normalize_volume", "argmax_flow", "build_correlation",
           "extract_features", "iterative_refine", "pool_correlation", "KPlaneField",
           "charbonnier", "psnr", "ssim", "MotionBasis", "TrajectoryField", "eval_flow_field",
           "fit_coefficients", "backward_warp", "softmax_splat"]
