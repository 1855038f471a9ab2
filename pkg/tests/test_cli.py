import json

import numpy as np
import pytest

from spikedepth.cli import main
from spikedepth.dataio import read_dpth, read_spkv

TINY = {"width": 32, "height": 16, "frames": 8, "base_channels": 8, "max_disp": 4, "window_width": 4,
        "fft_k": 3, "hidden_rnn_channels": 4, "encoding_channels": 8, "agg_channels": 4,
        "scenes": 10, "iterations": 2, "batch_size": 2}


def run(*argv):
    return main([str(a) for a in argv])


def test_end_to_end(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    data, run_dir, ev = tmp_path / "data", tmp_path / "run", tmp_path / "eval"
    assert run("build-dataset", "--config", cfg, "--out", data) == 0
    summary = json.loads((data / "summary.json").read_text())
    assert summary["counts"] == {"train": 7, "val": 1, "test": 2}
    manifest = data / "manifest.jsonl"
    assert run("train", "--config", cfg, "--manifest", manifest, "--out", run_dir, "--mode", "base") == 0
    resolved = json.loads((run_dir / "config.json").read_text())
    assert resolved["mode"] == "base" and resolved["iterations"] == 2 and resolved["lr"] == 2e-3
    assert run("eval", "--config", cfg, "--checkpoint", run_dir / "model.ugdf", "--manifest", manifest,
               "--out", ev, "--branch", "stereo") == 0
    assert list(json.loads((ev / "summary.json").read_text())["reports"]) == ["stereo"]
    assert run("report", ev, ev, "--out", tmp_path / "rep") == 0
    pooled = json.loads((tmp_path / "rep" / "summary.json").read_text())["reports"]["stereo"]
    single = json.loads((ev / "summary.json").read_text())["reports"]["stereo"]
    assert pooled["valid_pixels"] == 2 * single["valid_pixels"]
    assert pooled["abs_rel"] == pytest.approx(single["abs_rel"])


def test_simulate_clip_and_scene(tmp_path):
    clip = np.full((100, 2, 3), 0.25)
    np.save(tmp_path / "clip.npy", clip)
    assert run("simulate", "--intensity", tmp_path / "clip.npy", "--out", tmp_path / "a") == 0
    v = read_spkv(tmp_path / "a" / "clip.spkv").unpack()
    assert np.all(v.sum(axis=0) == 25)
    assert run("simulate", "--width", 32, "--height", 16, "--frames", 4, "--out", tmp_path / "b") == 0
    depth, invalid = read_dpth(tmp_path / "b" / "right_depth.dpth")
    assert depth.shape == (16, 32) and invalid == 0


def test_fuse_command(tmp_path):
    np.save(tmp_path / "m.npy", np.array([[10.0, 60.0]]))
    np.save(tmp_path / "s.npy", np.array([[11.0, 55.0]]))
    np.save(tmp_path / "sm.npy", np.full((1, 2), 0.5))
    np.save(tmp_path / "ss.npy", np.full((1, 2), 0.5))
    assert run("fuse", "--mono", tmp_path / "m.npy", "--stereo", tmp_path / "s.npy",
               "--sigma-m", tmp_path / "sm.npy", "--sigma-s", tmp_path / "ss.npy", "--d-max", 100,
               "--out", tmp_path / "f") == 0
    fused, _ = read_dpth(tmp_path / "f" / "fused.dpth")
    assert fused.tolist() == [[11.0, 60.0]]
    assert np.load(tmp_path / "f" / "mask.npy").tolist() == [[0, 1]]
    assert np.allclose(np.load(tmp_path / "f" / "threshold.npy"), 50.0)


def test_precedence_flag_over_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"theta": 2.0, "seed": 4}))
    np.save(tmp_path / "clip.npy", np.full((10, 1, 1), 0.5))
    assert run("simulate", "--config", cfg, "--theta", 0.5, "--intensity", tmp_path / "clip.npy",
               "--out", tmp_path / "o") == 0
    resolved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert resolved["theta"] == 0.5 and resolved["seed"] == 4


def test_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert run("gradcheck", "--config", cfg, "--out", tmp_path / "x") == 2
    assert "unknown config keys" in capsys.readouterr().err
    (tmp_path / "junk.spkv").write_bytes(b"NOPE")
    assert run("eval", "--checkpoint", tmp_path / "junk.ugdf", "--manifest", tmp_path / "none.jsonl",
               "--out", tmp_path / "y") == 2
    np.save(tmp_path / "neg.npy", np.full((2, 2, 2), -1.0))
    assert run("simulate", "--intensity", tmp_path / "neg.npy", "--out", tmp_path / "z") == 2
    with pytest.raises(SystemExit):
        run("train", "--out", tmp_path / "w")


def test_gradcheck_operators_only(tmp_path):
    assert run("gradcheck", "--skip-composition", "--out", tmp_path / "g") == 0
    s = json.loads((tmp_path / "g" / "summary.json").read_text())
    assert s["passed"] and max(s["operators"].values()) <= 1e-4
