import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spikedepth.dataio import (DATASET_FIRING, FormatError, ManifestRecord, build_dataset, decode_checkpoint, decode_dpth,
                               decode_spkv, encode_checkpoint, encode_dpth, encode_spkv, load_sample,
                               read_manifest, scene_seed, split_counts, write_manifest)
from spikedepth.scene import CameraRig, SceneConfig
from spikedepth.spikes import FiringConfig, IntensityClip, integrate_and_fire, pack_voxel

dims = st.tuples(st.integers(1, 12), st.integers(1, 9), st.integers(1, 9))


@settings(max_examples=1000, deadline=None)
@given(dims.flatmap(lambda s: arrays(np.uint8, s, elements=st.integers(0, 1))))
def test_spkv_round_trip(v):
    blob = encode_spkv(v)
    assert len(blob) == 18 + -(-v.size // 8)
    back = decode_spkv(blob)
    assert back.shape == v.shape
    assert np.array_equal(back.unpack(), v)
    assert encode_spkv(back) == blob


depth_elems = st.one_of(st.floats(0.0009765625, 8192.0, width=32), st.just(np.nan))


@settings(max_examples=1000, deadline=None)
@given(st.tuples(st.integers(1, 10), st.integers(1, 10)).flatmap(
    lambda s: arrays(np.float32, s, elements=depth_elems)))
def test_dpth_round_trip(d):
    back, invalid = decode_dpth(encode_dpth(d))
    assert back.dtype == np.float32 and back.shape == d.shape
    assert np.array_equal(back, d, equal_nan=True)
    assert invalid == int(np.isnan(d).sum())


def spkv_blob():
    v = np.zeros((3, 2, 3), dtype=np.uint8)
    v[0, 0, 0] = 1
    return encode_spkv(v)


def offset_of(fn, blob):
    with pytest.raises(FormatError) as exc:
        fn(blob)
    return exc.value.offset, str(exc.value)


def test_spkv_bit_layout():
    blob = spkv_blob()
    assert blob[:6] == b"SPKV1\0"
    assert struct.unpack("<3I", blob[6:18]) == (3, 2, 3)
    assert blob[18] == 0x80 and len(blob) == 18 + 3


def test_spkv_corruptions():
    blob = spkv_blob()
    assert offset_of(decode_spkv, b"SPKX1\0" + blob[6:])[0] == 3
    assert offset_of(decode_spkv, blob[:4])[0] == 4
    off, msg = offset_of(decode_spkv, blob[:12])
    assert off == 12 and "truncated header" in msg
    off, msg = offset_of(decode_spkv, blob[:-1])
    assert off == len(blob) - 1 and "expected 3 bytes, got 2" in msg
    off, msg = offset_of(decode_spkv, blob + b"\0\0")
    assert off == len(blob) and "2 trailing" in msg
    zero = blob[:10] + struct.pack("<I", 0) + blob[14:]
    assert offset_of(decode_spkv, zero)[0] == 10
    big = blob[:14] + struct.pack("<I", (1 << 16) + 1) + blob[18:]
    off, msg = offset_of(decode_spkv, big)
    assert off == 14 and "outside" in msg
    # 18 bits in 3 bytes leaves 6 padding bits that must be zero
    padded = blob[:-1] + bytes([0x01])
    assert offset_of(decode_spkv, padded)[0] == len(blob) - 1


def test_dpth_corruptions():
    blob = encode_dpth(np.array([[1.0, np.nan], [3.0, 4.0]]))
    assert offset_of(decode_dpth, b"X" + blob[1:])[0] == 0
    off, msg = offset_of(decode_dpth, blob[:-3])
    assert "expected 16 bytes, got 13" in msg and off == len(blob) - 3
    assert offset_of(decode_dpth, blob + b"\0")[0] == len(blob)
    assert offset_of(decode_dpth, blob[:6] + struct.pack("<I", 1 << 20) + blob[10:])[0] == 6
    with pytest.raises(ValueError):
        encode_dpth(np.zeros(3))


def test_checkpoint_round_trip_and_corruption():
    rng = np.random.default_rng(0)
    arrs = {"a.weight": rng.normal(size=(2, 3, 1)).astype(np.float32), "b": np.array(2.5, dtype=np.float32),
            "ünï": np.zeros(0, dtype=np.float32)}
    blob = encode_checkpoint(arrs)
    back = decode_checkpoint(blob)
    assert list(back) == list(arrs)
    for k in arrs:
        assert back[k].shape == arrs[k].shape and np.array_equal(back[k], arrs[k])
    assert offset_of(decode_checkpoint, b"UGDF2\0" + blob[6:])[0] == 4
    off, msg = offset_of(decode_checkpoint, blob[:-2])
    assert off == len(blob) - 2 and "truncated" in msg
    assert offset_of(decode_checkpoint, blob + b"\0")[0] == len(blob)


def test_packed_voxel_accepted():
    v = np.random.default_rng(1).integers(0, 2, (5, 3, 3), dtype=np.uint8)
    assert encode_spkv(pack_voxel(v)) == encode_spkv(v)


@pytest.mark.parametrize("n,expect", [(10, (7, 2, 1)), (20, (14, 4, 2)), (60, (42, 12, 6)), (1, (1, 0, 0))])
def test_split_counts(n, expect):
    c = split_counts(n, {"train": 0.7, "test": 0.2, "val": 0.1})
    assert (c["train"], c["test"], c["val"]) == expect


def test_split_fractions_must_sum_to_one():
    with pytest.raises(ValueError):
        split_counts(10, {"train": 0.7, "test": 0.2})


def test_scene_seed_distinct():
    seeds = {scene_seed(s, i) for s in range(5) for i in range(200)}
    assert len(seeds) == 1000


TINY = SceneConfig(height=16, width=32, frames=8)
RIG = CameraRig()


def test_build_dataset_deterministic(tmp_path):
    a = build_dataset(tmp_path / "a", 10, TINY, RIG, seed=3)
    b = build_dataset(tmp_path / "b", 10, TINY, RIG, seed=3)
    assert a.read_bytes() == b.read_bytes()
    recs = read_manifest(a)
    tags = [r.split for r in recs]
    assert (tags.count("train"), tags.count("test"), tags.count("val")) == (7, 2, 1)
    for ra, rb in zip(recs, read_manifest(b)):
        for f in ("left_spkv", "right_spkv", "right_depth"):
            assert (a.parent / getattr(ra, f)).read_bytes() == (b.parent / getattr(rb, f)).read_bytes()
    left, right, depth = load_sample(a.parent, recs[0])
    assert left.shape == right.shape == (8, 16, 32) and depth.shape == (16, 32)
    assert set(np.unique(left)) <= {0, 1}
    c = build_dataset(tmp_path / "c", 10, TINY, RIG, seed=4)
    assert c.read_bytes() != a.read_bytes()


def test_manifest_round_trip_and_errors(tmp_path):
    recs = [ManifestRecord("l.spkv", "r.spkv", "d.dpth", RIG, s, i) for i, s in enumerate(("train", "val", "test"))]
    path = tmp_path / "m.jsonl"
    write_manifest(path, recs)
    assert read_manifest(path, check_files=False) == recs
    with pytest.raises(FileNotFoundError):
        read_manifest(path)
    bad = replace(recs[0], split="holdout")
    path.write_text(bad.to_json() + "\n")
    with pytest.raises(ValueError, match="split"):
        read_manifest(path, check_files=False)
    path.write_text('{"left_spkv": "x"}\n')
    with pytest.raises(ValueError, match="m.jsonl:1"):
        read_manifest(path, check_files=False)


def test_dataset_firing_resolves_bright_levels():
    levels = np.array([0.55, 0.65, 0.75, 0.85])
    clip = IntensityClip(np.broadcast_to(levels, (100, 1, 4)).copy())
    zero = integrate_and_fire(clip, FiringConfig()).sum(axis=0)[0]
    kept = integrate_and_fire(clip, DATASET_FIRING).sum(axis=0)[0]
    assert np.all(zero == 50)
    assert kept.tolist() == [55, 65, 75, 85]
