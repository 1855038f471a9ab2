"""Integrate-and-fire spike camera model and spike voxel utilities."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._accel import USE_NUMBA, njit


class ResetMode(str, Enum):
    ZERO = "reset-to-zero"
    SUBTRACT = "subtract-threshold"


@dataclass(frozen=True)
class FiringConfig:
    theta: float = 1.0
    reset_mode: ResetMode = ResetMode.ZERO

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"firing threshold must be > 0, got {self.theta}")
        object.__setattr__(self, "reset_mode", ResetMode(self.reset_mode))


@dataclass
class IntensityClip:
    """Normalised luminance, T x H x W in [0, 1], ``dt`` seconds per step."""

    frames: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 3 or min(f.shape) < 1:
            raise ValueError(f"clip must be T x H x W with every extent >= 1, got {f.shape}")
        if not np.all(np.isfinite(f)) or f.min() < 0.0 or f.max() > 1.0:
            raise ValueError("clip intensities must lie in [0, 1]")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        self.frames = f

    @property
    def shape(self):
        return self.frames.shape


@dataclass(frozen=True)
class SpikeVoxel:
    """Bit-packed binary T x H x W tensor.

    Layout is (t, row, col) row-major, most significant bit first inside
    each byte; the last byte is zero padded.
    """

    shape: tuple
    packed: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ValueError(f"voxel shape must be (T, H, W) with extents >= 1, got {shape}")
        need = packed_size(shape)
        packed = np.ascontiguousarray(self.packed, dtype=np.uint8).reshape(-1)
        if packed.size != need:
            raise ValueError(f"packed payload has {packed.size} bytes, expected {need}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "packed", packed)

    def unpack(self) -> np.ndarray:
        return unpack_voxel(self)

    def __eq__(self, other):
        if not isinstance(other, SpikeVoxel):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.packed, other.packed)


def packed_size(shape) -> int:
    n = int(np.prod(shape))
    return (n + 7) // 8


# -- integrate and fire ------------------------------------------------------


@njit
def _iaf_numba(frames, theta, dt, subtract):
    T, H, W = frames.shape
    out = np.zeros((T, H, W), dtype=np.uint8)
    for i in range(H):
        for j in range(W):
            v = 0.0
            for t in range(T):
                v += frames[t, i, j] * dt
                if v >= theta:
                    out[t, i, j] = 1
                    if subtract:
                        v -= theta
                    else:
                        v = 0.0
    return out


def _iaf_numpy(frames, theta, dt, subtract):
    T = frames.shape[0]
    out = np.zeros(frames.shape, dtype=np.uint8)
    v = np.zeros(frames.shape[1:], dtype=np.float64)
    for t in range(T):
        v += frames[t] * dt
        fired = v >= theta
        out[t] = fired
        if subtract:
            v[fired] -= theta
        else:
            v[fired] = 0.0
    return out


def integrate_and_fire(clip, cfg: FiringConfig | None = None, *, use_numba: bool | None = None) -> np.ndarray:
    """Simulate a spike camera on an intensity clip.

    Each pixel accumulates ``I * dt`` per step (left Riemann sum) and emits a
    one-bit spike whenever the accumulator reaches ``theta``, after which the
    accumulator is reset per ``cfg.reset_mode``. Returns a dense uint8
    T x H x W array of 0/1; wrap with :func:`pack_voxel` for storage.
    """
    cfg = cfg or FiringConfig()
    if not isinstance(clip, IntensityClip):
        clip = IntensityClip(clip)
    frames = np.ascontiguousarray(clip.frames, dtype=np.float64)
    subtract = cfg.reset_mode is ResetMode.SUBTRACT
    if use_numba is None:
        use_numba = USE_NUMBA
    kernel = _iaf_numba if use_numba else _iaf_numpy
    return kernel(frames, float(cfg.theta), float(clip.dt), subtract)


# -- packing ---------------------------------------------------------------


def _as_binary(frames) -> np.ndarray:
    a = np.asarray(frames)
    if a.ndim != 3:
        raise ValueError(f"expected a T x H x W array, got shape {a.shape}")
    if a.dtype == np.bool_:
        return a.astype(np.uint8)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError("spike frames must be binary (0/1)")
    return a.astype(np.uint8)


def pack_voxel(frames) -> SpikeVoxel:
    a = _as_binary(frames)
    return SpikeVoxel(a.shape, np.packbits(a.reshape(-1), bitorder="big"))


def unpack_voxel(voxel: SpikeVoxel) -> np.ndarray:
    n = int(np.prod(voxel.shape))
    bits = np.unpackbits(voxel.packed, count=n, bitorder="big")
    return bits.reshape(voxel.shape)


def as_dense(voxel) -> np.ndarray:
    """Dense 0/1 view of either a :class:`SpikeVoxel` or an array."""
    if isinstance(voxel, SpikeVoxel):
        return unpack_voxel(voxel)
    return _as_binary(voxel)


# -- windowing and features -------------------------------------------------


def chunk_windows(voxel, n: int) -> list[np.ndarray]:
    """Split into ``floor(T / n)`` consecutive windows of width ``n``.

    Trailing frames that do not fill a whole window are dropped.
    """
    dense = as_dense(voxel)
    T = dense.shape[0]
    if not 1 <= n <= T:
        raise ValueError(f"window width must be in [1, {T}], got {n}")
    s = T // n
    return [dense[k * n:(k + 1) * n] for k in range(s)]


def rate_map(voxel) -> np.ndarray:
    return as_dense(voxel).mean(axis=0, dtype=np.float64)


def temporal_frequency_features(voxel, k: int) -> np.ndarray:
    """Magnitudes of the first ``k`` temporal DFT coefficients, divided by T.

    Coefficient 0 (the spike rate) comes first.
    """
    dense = as_dense(voxel).astype(np.float64)
    T = dense.shape[0]
    kmax = T // 2 + 1
    if not 1 <= k <= kmax:
        raise ValueError(f"coefficient count must be in [1, {kmax}], got {k}")
    spec = np.fft.rfft(dense, axis=0)[:k]
    return np.abs(spec) / T
