"""Procedural stereo scenes with exact depth and disparity ground truth.

A scene is a stack of textured fronto-parallel layers. The farthest layer is
a backdrop covering the whole frame; nearer layers are rectangles that
occlude what lies behind them. Layers drift horizontally with a speed
inversely proportional to depth, and distant layers fade towards a haze
level (aerial perspective), which is what gives a single view any depth cue.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import USE_NUMBA, njit
from .spikes import IntensityClip

TEXTURE_MODES = ("checker", "noise", "stripes")


@dataclass(frozen=True)
class CameraRig:
    focal_px: float = 125.0
    baseline_m: float = 2.0
    d_max: float = 500.0

    def __post_init__(self):
        for name in ("focal_px", "baseline_m", "d_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    @property
    def fb(self) -> float:
        return self.focal_px * self.baseline_m

    def to_dict(self) -> dict:
        return {"focal_px": self.focal_px, "baseline_m": self.baseline_m, "d_max": self.d_max}


@dataclass(frozen=True)
class SceneConfig:
    width: int = 128
    height: int = 64
    frames: int = 100
    layer_count: int = 4
    depth_range: tuple = (5.0, 400.0)
    texture_mode: str = "noise"
    motion_px_per_frame: float = 0.1
    seed: int = 0
    # Pins layer depths (farthest first is not required); overrides sampling.
    layer_depths: tuple | None = None
    haze_distance: float = 250.0
    haze_level: float = 0.85
    texture_size_m: float = 2.0

    def validate(self, rig: CameraRig) -> None:
        d_near, d_far = (float(x) for x in self.depth_range)
        if not 0 < d_near < d_far <= rig.d_max:
            raise ValueError(
                f"need 0 < d_near < d_far <= d_max, got {self.depth_range} with d_max={rig.d_max}")
        if self.width < 1 or self.height < 1 or self.frames < 1:
            raise ValueError("width, height and frames must be >= 1")
        if self.layer_count < 1:
            raise ValueError("layer_count must be >= 1")
        if self.texture_mode not in TEXTURE_MODES:
            raise ValueError(f"texture_mode must be one of {TEXTURE_MODES}")
        if self.layer_depths is not None:
            if len(self.layer_depths) != self.layer_count:
                raise ValueError("layer_depths must have layer_count entries")
            if any(not 0 < d <= rig.d_max for d in self.layer_depths):
                raise ValueError("pinned layer depths must lie in (0, d_max]")
        if not (self.haze_distance > 0 and self.texture_size_m > 0 and 0 <= self.haze_level <= 1):
            raise ValueError("need haze_distance > 0, texture_size_m > 0 and haze_level in [0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


@dataclass
class StereoSample:
    left_clip: IntensityClip
    right_clip: IntensityClip
    right_depth_gt: np.ndarray
    right_disparity_gt: np.ndarray
    left_depth_gt: np.ndarray
    layer_depths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # Per layer, farthest first: x0, x1, y0, y1 of its extent in layer coordinates
    # at frame 0, and its drift in pixels per frame. The backdrop is unbounded.
    layer_boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    layer_velocity: np.ndarray = field(default_factory=lambda: np.zeros(0))


# -- depth / disparity ------------------------------------------------------


def _valid(a, mask):
    a = np.asarray(a, dtype=np.float64)
    valid = np.isfinite(a)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    return a, valid


def depth_to_disparity(depth, rig: CameraRig, mask=None) -> np.ndarray:
    """``disp = f * b / D`` at valid pixels; NaN elsewhere."""
    d, valid = _valid(depth, mask)
    if np.any(d[valid] <= 0):
        raise ValueError("depth must be > 0 at valid pixels")
    out = np.full(d.shape, np.nan)
    out[valid] = rig.fb / d[valid]
    return out


def disparity_to_depth(disparity, rig: CameraRig, mask=None) -> np.ndarray:
    p, valid = _valid(disparity, mask)
    if np.any(p[valid] <= 0):
        raise ValueError("disparity must be > 0 at valid pixels")
    out = np.full(p.shape, np.nan)
    out[valid] = rig.fb / p[valid]
    return out


def normalize_depth(depth, rig: CameraRig, mask=None) -> tuple[np.ndarray, int]:
    """Scale metric depth into (0, 1] by ``d_max``.

    Non-positive or NaN depths are treated as invalid and stay NaN. Depths
    beyond ``d_max`` are clamped to 1 and counted; the count is returned.
    """
    d, valid = _valid(depth, mask)
    valid &= d > 0
    out = np.full(d.shape, np.nan)
    norm = d[valid] / rig.d_max
    over = norm > 1.0
    out[valid] = np.where(over, 1.0, norm)
    return out, int(over.sum())


def denormalize_depth(norm, rig: CameraRig) -> np.ndarray:
    return np.asarray(norm, dtype=np.float64) * rig.d_max


# -- textures ---------------------------------------------------------------


def _value_noise(rng, h, w, spacing):
    gh = int(h // spacing) + 2
    gw = int(w // spacing) + 2
    grid = rng.random((gh, gw))
    ys = np.arange(h) / spacing
    xs = np.arange(w) / spacing
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = grid[y0][:, x0]
    b = grid[y0][:, x0 + 1]
    c = grid[y0 + 1][:, x0]
    d = grid[y0 + 1][:, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def _texture(rng, mode, h, w, scale):
    """Albedo in [0.05, 0.65]; ``scale`` is the pattern size in pixels."""
    if mode == "noise":
        t = (0.5 * _value_noise(rng, h, w, scale) + 0.3 * _value_noise(rng, h, w, max(scale / 2, 1.0))
             + 0.2 * _value_noise(rng, h, w, max(scale / 4, 1.0)))
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    elif mode == "checker":
        p = max(int(round(scale)), 1)
        yy, xx = np.mgrid[0:h, 0:w]
        t = (((yy // p) + (xx // p)) % 2).astype(np.float64)
        t = 0.75 * t + 0.25 * _value_noise(rng, h, w, max(scale / 3, 1.0))
    else:
        phase = rng.uniform(0, 2 * np.pi)
        xx = np.arange(w)[None, :]
        t = 0.5 + 0.4 * np.sin(np.pi * xx / scale + phase) + 0.1 * _value_noise(rng, h, w, max(scale / 2, 1.0))
        t = np.clip(t, 0.0, 1.0)
    # Fixed albedo range: brightness differences between layers come from haze only.
    return 0.05 + 0.6 * t


# -- rendering kernels --------------------------------------------------------


@njit
def _render_numba(tex, depth, disp, vel, x0, x1, y0, y1, off, shift, height, width, frames):
    L = depth.shape[0]
    wc = tex.shape[2]
    out = np.zeros((frames, height, width))
    gt = np.zeros((height, width))
    for t in range(frames):
        for i in range(height):
            for j in range(width):
                for l in range(L - 1, -1, -1):
                    xl = j + shift * disp[l] - vel[l] * t
                    if xl >= x0[l] and xl < x1[l] and i >= y0[l] and i < y1[l]:
                        u = xl + off
                        k = int(math.floor(u))
                        if k < 0:
                            k = 0
                        if k > wc - 2:
                            k = wc - 2
                        f = u - k
                        out[t, i, j] = tex[l, i, k] * (1.0 - f) + tex[l, i, k + 1] * f
                        if t == frames - 1:
                            gt[i, j] = depth[l]
                        break
    return out, gt


def _render_numpy(tex, depth, disp, vel, x0, x1, y0, y1, off, shift, height, width, frames):
    L = depth.shape[0]
    wc = tex.shape[2]
    out = np.zeros((frames, height, width))
    gt = np.zeros((height, width))
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height)
    for t in range(frames):
        img = np.zeros((height, width))
        dep = np.zeros((height, width))
        for l in range(L):  # back to front, nearer layers overwrite
            xl = cols + shift * disp[l] - vel[l] * t
            cover = ((xl >= x0[l]) & (xl < x1[l]))[None, :] & ((rows >= y0[l]) & (rows < y1[l]))[:, None]
            u = xl + off
            k = np.clip(np.floor(u).astype(np.int64), 0, wc - 2)
            f = (u - k)[None, :]
            val = tex[l][:, k] * (1.0 - f) + tex[l][:, k + 1] * f
            img = np.where(cover, val, img)
            dep = np.where(cover, depth[l], dep)
        out[t] = img
        if t == frames - 1:
            gt = dep
    return out, gt


def _render(*args, use_numba=None):
    if use_numba is None:
        use_numba = USE_NUMBA
    return (_render_numba if use_numba else _render_numpy)(*args)


# -- generator --------------------------------------------------------------


def sample_layer_depths(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Layer depths, farthest first. Log-uniform in ``depth_range`` unless pinned."""
    if cfg.layer_depths is not None:
        d = np.asarray(cfg.layer_depths, dtype=np.float64)
    else:
        lo, hi = np.log(cfg.depth_range[0]), np.log(cfg.depth_range[1])
        d = np.exp(rng.uniform(lo, hi, cfg.layer_count))
    return np.sort(d)[::-1].copy()


def generate_scene(cfg: SceneConfig, rig: CameraRig, *, use_numba: bool | None = None) -> StereoSample:
    cfg.validate(rig)
    rng = np.random.default_rng(cfg.seed)
    H, W, T = cfg.height, cfg.width, cfg.frames
    depths = sample_layer_depths(cfg, rng)
    L = depths.size
    disp = rig.fb / depths
    d_near = min(float(cfg.depth_range[0]), float(depths.min()))
    vel = cfg.motion_px_per_frame * d_near / depths

    x0 = np.full(L, -1e12)
    x1 = np.full(L, 1e12)
    y0 = np.zeros(L, dtype=np.int64)
    y1 = np.full(L, H, dtype=np.int64)
    for l in range(1, L):
        w = rng.uniform(0.2, 0.6) * W
        h = int(round(rng.uniform(0.3, 0.9) * H))
        x0[l] = rng.uniform(0.0, W - w)
        x1[l] = x0[l] + w
        y0[l] = int(rng.integers(0, H - h + 1))
        y1[l] = y0[l] + h

    off = float(math.ceil(vel.max() * (T - 1))) + 2.0
    wc = int(W + math.ceil(disp.max()) + off + 4)
    transmission = np.exp(-depths / cfg.haze_distance)
    # A world pattern of fixed size shrinks on screen with distance.
    scale = np.clip(rig.focal_px * cfg.texture_size_m / depths, 1.5, 16.0)
    tex = np.empty((L, H, wc))
    for l in range(L):
        raw = _texture(rng, cfg.texture_mode, H, wc, scale[l])
        tex[l] = raw * transmission[l] + cfg.haze_level * (1.0 - transmission[l])

    common = (tex, depths, disp, vel, x0, x1, y0, y1, off)
    left, left_gt = _render(*common, 0.0, H, W, T, use_numba=use_numba)
    right, right_gt = _render(*common, 1.0, H, W, T, use_numba=use_numba)
    np.clip(left, 0.0, 1.0, out=left)
    np.clip(right, 0.0, 1.0, out=right)
    return StereoSample(
        left_clip=IntensityClip(left),
        right_clip=IntensityClip(right),
        right_depth_gt=right_gt,
        right_disparity_gt=depth_to_disparity(right_gt, rig),
        left_depth_gt=left_gt,
        layer_depths=depths,
        layer_boxes=np.stack([x0, x1, y0.astype(np.float64), y1.astype(np.float64)], axis=1),
        layer_velocity=vel,
    )
