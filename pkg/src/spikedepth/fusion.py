"""Uncertainty-guided fusion of monocular and stereo depth, and the 50/50 ensemble."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class FusionResult:
    fused_depth: np.ndarray
    mask: np.ndarray          # 1 where the monocular prediction was taken
    threshold: np.ndarray     # per-pixel distance threshold, metres
    single_source: np.ndarray  # pixels valid in only one input


def distance_threshold(sigma_m, sigma_s, d_max: float) -> np.ndarray:
    """``d_max * e^{2(sm - ss)} / (1 + e^{2(sm - ss)})``, evaluated stably."""
    sm = np.asarray(sigma_m, dtype=np.float64)
    ss = np.asarray(sigma_s, dtype=np.float64)
    if sm.shape != ss.shape:
        raise ValueError("uncertainty maps differ in shape")
    for s in (sm, ss):
        if np.any(~np.isfinite(s)) or s.min(initial=0.0) < 0 or s.max(initial=0.0) > 1:
            raise ValueError("uncertainties must lie in [0, 1]")
    return d_max / (1.0 + np.exp(-2.0 * (sm - ss)))


def fusion_mask(mono_depth, threshold) -> np.ndarray:
    """1 where mono depth exceeds the threshold; ties and NaN go to stereo."""
    mono = np.asarray(mono_depth, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return (mono > np.asarray(threshold, dtype=np.float64)).astype(np.uint8)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"depth maps differ in shape: {a.shape} vs {b.shape}")
    return a, b


def fuse(mono, stereo, mask, threshold=None) -> FusionResult:
    """Per-pixel hard selection between branches.

    Where only one input is valid that input is used and the pixel is
    flagged in ``single_source``; where neither is valid the output is NaN.
    """
    mono, stereo = _pair(mono, stereo)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != mono.shape:
        raise ValueError("mask shape does not match depth maps")
    vm, vs = np.isfinite(mono), np.isfinite(stereo)
    out = np.where(mask, mono, stereo)
    only_m = vm & ~vs
    only_s = vs & ~vm
    out = np.where(only_m, mono, out)
    out = np.where(only_s, stereo, out)
    out[~vm & ~vs] = np.nan
    if threshold is None:
        threshold = np.full(mono.shape, np.nan)
    return FusionResult(out, mask.astype(np.uint8), np.asarray(threshold, dtype=np.float64), only_m | only_s)


def guided_fusion(mono, stereo, sigma_m, sigma_s, d_max: float) -> FusionResult:
    thr = distance_threshold(sigma_m, sigma_s, d_max)
    return fuse(mono, stereo, fusion_mask(mono, thr), thr)


def ensemble_fuse(mono, stereo) -> np.ndarray:
    mono, stereo = _pair(mono, stereo)
    out = 0.5 * mono + 0.5 * stereo
    out = np.where(np.isfinite(mono) & ~np.isfinite(stereo), mono, out)
    out = np.where(np.isfinite(stereo) & ~np.isfinite(mono), stereo, out)
    return out
