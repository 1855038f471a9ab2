"""File formats, dataset manifests and dataset construction.

Binary formats (all integers unsigned 32-bit little-endian):

SPKV  ``b"SPKV1\\0"`` T H W, then ceil(T*H*W/8) bytes of spikes, (t, row,
      col) row-major, MSB first.
DPTH  ``b"DPTH1\\0"`` H W, then H*W float32 LE depths in metres, row-major,
      NaN for invalid pixels.
UGDF  ``b"UGDF1\\0"`` count, then per array: name length, UTF-8 name, rank,
      extents, float32 LE values. Used for parameter checkpoints.

Readers raise :class:`FormatError` carrying the byte offset of the first
violation.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .scene import CameraRig, SceneConfig, generate_scene
from .spikes import FiringConfig, ResetMode, SpikeVoxel, integrate_and_fire, pack_voxel, packed_size

SPKV_MAGIC = b"SPKV1\0"
DPTH_MAGIC = b"DPTH1\0"
CKPT_MAGIC = b"UGDF1\0"
MAX_EXTENT = 1 << 16
SPLITS = ("train", "val", "test")
# Reset-to-zero at theta=1 maps every intensity in [0.5, 1) to the same
# rate, which erases the haze cue; keeping the residual charge does not.
DATASET_FIRING = FiringConfig(theta=1.0, reset_mode=ResetMode.SUBTRACT)


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _read_bytes(src) -> bytes:
    if isinstance(src, (bytes, bytearray, memoryview)):
        return bytes(src)
    return Path(src).read_bytes()


def _check_magic(data: bytes, magic: bytes, kind: str):
    for i, b in enumerate(magic):
        if i >= len(data):
            raise FormatError(f"{kind}: file ends inside the magic bytes", len(data))
        if data[i] != b:
            raise FormatError(f"{kind}: bad magic", i)


def _read_dims(data: bytes, count: int, kind: str) -> tuple:
    start = 6
    end = start + 4 * count
    if len(data) < end:
        raise FormatError(f"{kind}: truncated header, expected {end} bytes, got {len(data)}", len(data))
    dims = struct.unpack_from(f"<{count}I", data, start)
    for i, n in enumerate(dims):
        if n == 0 or n > MAX_EXTENT:
            raise FormatError(f"{kind}: dimension {i} = {n} outside [1, {MAX_EXTENT}]", start + 4 * i)
    return dims


def _check_payload(data: bytes, offset: int, expected: int, kind: str):
    actual = len(data) - offset
    if actual < expected:
        raise FormatError(f"{kind}: truncated payload, expected {expected} bytes, got {actual}", len(data))
    if actual > expected:
        raise FormatError(f"{kind}: {actual - expected} trailing bytes after payload", offset + expected)


# -- SPKV --------------------------------------------------------------------


def encode_spkv(voxel) -> bytes:
    if not isinstance(voxel, SpikeVoxel):
        voxel = pack_voxel(voxel)
    T, H, W = voxel.shape
    if max(voxel.shape) > MAX_EXTENT:
        raise ValueError(f"voxel extents must be <= {MAX_EXTENT}")
    return SPKV_MAGIC + struct.pack("<3I", T, H, W) + voxel.packed.tobytes()


def decode_spkv(data: bytes) -> SpikeVoxel:
    _check_magic(data, SPKV_MAGIC, "SPKV")
    T, H, W = _read_dims(data, 3, "SPKV")
    off = 6 + 12
    need = packed_size((T, H, W))
    _check_payload(data, off, need, "SPKV")
    payload = np.frombuffer(data, dtype=np.uint8, offset=off, count=need)
    spare = need * 8 - T * H * W
    if spare and payload[-1] & ((1 << spare) - 1):
        raise FormatError("SPKV: non-zero padding bits in the final byte", off + need - 1)
    return SpikeVoxel((T, H, W), payload.copy())


def write_spkv(path, voxel) -> None:
    Path(path).write_bytes(encode_spkv(voxel))


def read_spkv(src) -> SpikeVoxel:
    return decode_spkv(_read_bytes(src))


# -- DPTH -------------------------------------------------------------------


def encode_dpth(depth) -> bytes:
    d = np.asarray(depth, dtype="<f4")
    if d.ndim != 2 or max(d.shape) > MAX_EXTENT or min(d.shape) < 1:
        raise ValueError(f"depth map must be 2-d with extents in [1, {MAX_EXTENT}], got {d.shape}")
    H, W = d.shape
    return DPTH_MAGIC + struct.pack("<2I", H, W) + np.ascontiguousarray(d).tobytes()


def decode_dpth(data: bytes) -> tuple[np.ndarray, int]:
    """Returns the depth map (float32) and its number of invalid (NaN) pixels."""
    _check_magic(data, DPTH_MAGIC, "DPTH")
    H, W = _read_dims(data, 2, "DPTH")
    off = 6 + 8
    _check_payload(data, off, 4 * H * W, "DPTH")
    d = np.frombuffer(data, dtype="<f4", offset=off, count=H * W).reshape(H, W).astype(np.float32)
    return d, int(np.isnan(d).sum())


def write_dpth(path, depth) -> None:
    Path(path).write_bytes(encode_dpth(depth))


def read_dpth(src) -> tuple[np.ndarray, int]:
    return decode_dpth(_read_bytes(src))


# -- checkpoints --------------------------------------------------------------


def encode_checkpoint(arrays: dict) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> dict:
    _check_magic(data, CKPT_MAGIC, "UGDF")
    pos = 6

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"UGDF: truncated {what}, expected {n} bytes, got {len(data) - pos}", len(data))
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "array count"))
    out = {}
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("UGDF: array name is not UTF-8", start + 4) from None
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        n = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(take(4 * n, f"data of {name!r}"), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise FormatError(f"UGDF: {len(data) - pos} trailing bytes", pos)
    return out


def save_checkpoint(path, arrays: dict) -> None:
    Path(path).write_bytes(encode_checkpoint(arrays))


def load_checkpoint(path) -> dict:
    return decode_checkpoint(_read_bytes(path))


def module_arrays(module) -> dict:
    return {k: v.detach().cpu().float().numpy() for k, v in module.state_dict().items()}


def load_module_arrays(module, arrays: dict) -> None:
    import torch

    state = module.state_dict()
    missing = set(state) - set(arrays)
    if missing:
        raise KeyError(f"checkpoint lacks {sorted(missing)[:5]}")
    new = {k: torch.as_tensor(arrays[k]).to(state[k].dtype).reshape(state[k].shape) for k in state}
    module.load_state_dict(new)


# -- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    left_spkv: str
    right_spkv: str
    right_depth: str
    rig: CameraRig
    split: str
    seed: int

    def to_json(self) -> str:
        d = {"left_spkv": self.left_spkv, "right_spkv": self.right_spkv, "right_depth": self.right_depth,
             "rig": self.rig.to_dict(), "split": self.split, "seed": self.seed}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        if d["split"] not in SPLITS:
            raise ValueError(f"unknown split tag {d['split']!r}")
        return cls(d["left_spkv"], d["right_spkv"], d["right_depth"], CameraRig(**d["rig"]), d["split"],
                   int(d["seed"]))


def write_manifest(path, records) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records))


def read_manifest(path, check_files: bool = True) -> list[ManifestRecord]:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = ManifestRecord.from_dict(json.loads(line))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad manifest record: {exc}") from None
        if check_files:
            for f in (rec.left_spkv, rec.right_spkv, rec.right_depth):
                if not (path.parent / f).is_file():
                    raise FileNotFoundError(f"{path}:{lineno}: missing {f}")
        records.append(rec)
    return records


def split_counts(n: int, fractions: dict) -> dict:
    """Floor allocation for test/val; the remainder goes to train."""
    total = sum(fractions.values())
    if not math.isclose(total, 1.0, abs_tol=1e-9):
        raise ValueError(f"split fractions sum to {total}, not 1")
    n_test = math.floor(n * fractions.get("test", 0.0) + 1e-9)
    n_val = math.floor(n * fractions.get("val", 0.0) + 1e-9)
    return {"train": n - n_test - n_val, "test": n_test, "val": n_val}


def scene_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index * 7_919 + 1) % (1 << 32)


def build_dataset(
    out_dir,
    n_scenes: int,
    scene: SceneConfig = SceneConfig(),
    rig: CameraRig = CameraRig(),
    fractions: dict | None = None,
    seed: int = 0,
    firing: FiringConfig = DATASET_FIRING,
) -> Path:
    """Generate scenes, spike both views, write files and a manifest.

    Each record is one voxel pair of ``scene.frames`` steps plus the
    right-view depth at the final frame. Returns the manifest path.
    """
    fractions = fractions or {"train": 0.7, "test": 0.2, "val": 0.1}
    counts = split_counts(n_scenes, fractions)
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    order = np.random.default_rng(seed).permutation(n_scenes)
    tags = np.empty(n_scenes, dtype=object)
    pos = 0
    for tag in ("train", "test", "val"):
        tags[order[pos:pos + counts[tag]]] = tag
        pos += counts[tag]

    records = []
    for i in range(n_scenes):
        s = scene_seed(seed, i)
        sample = generate_scene(replace(scene, seed=s), rig)
        stem = f"scenes/scene_{i:04d}"
        write_spkv(out / f"{stem}_left.spkv", integrate_and_fire(sample.left_clip, firing))
        write_spkv(out / f"{stem}_right.spkv", integrate_and_fire(sample.right_clip, firing))
        write_dpth(out / f"{stem}_depth.dpth", sample.right_depth_gt)
        records.append(ManifestRecord(f"{stem}_left.spkv", f"{stem}_right.spkv", f"{stem}_depth.dpth",
                                      rig, str(tags[i]), s))
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest


def load_sample(manifest_dir, rec: ManifestRecord):
    """Dense left voxel, right voxel (uint8) and right depth (float64, NaN invalid)."""
    base = Path(manifest_dir)
    left = read_spkv(base / rec.left_spkv).unpack()
    right = read_spkv(base / rec.right_spkv).unpack()
    depth, _ = read_dpth(base / rec.right_depth)
    return left, right, depth.astype(np.float64)


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
