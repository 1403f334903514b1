"""Rolling-shutter formation, correction and evaluation toolkit."""

__version__ = "0.1.0"

from rscd.imagecore import (FrameSequence, ShutterParams, convert_transfer, load_image, load_sequence,
                            save_image, save_sequence)
from rscd.formation import (SynthesisMode, TimeRangeError, oracle_rscd, sample_gs, simulate_gs_blur,
                            simulate_rs, simulate_rscd)
from rscd.warp import backward_warp, build_pyramid, forward_warp, upsample_field
from rscd.flowsolve import SolverConfig, solve_flow
from rscd.rectify import GlobalMotion, fuse_aligned, rectify_global, rectify_with_flow
from rscd.metrics import psnr, row_discontinuity, ssim

__all__ = [
    "FrameSequence", "ShutterParams", "convert_transfer", "load_image", "load_sequence", "save_image",
    "save_sequence", "SynthesisMode", "TimeRangeError", "oracle_rscd", "sample_gs", "simulate_gs_blur",
    "simulate_rs", "simulate_rscd", "backward_warp", "build_pyramid", "forward_warp", "upsample_field",
    "SolverConfig", "solve_flow", "GlobalMotion", "fuse_aligned", "rectify_global", "rectify_with_flow",
    "psnr", "row_discontinuity", "ssim",
]
