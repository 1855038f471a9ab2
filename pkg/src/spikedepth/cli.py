"""Command-line entry point.

Every option resolves as flag > ``--config`` JSON file > built-in default,
and the resolved configuration is written to ``<out>/config.json`` before
the command runs. Each command also writes ``<out>/summary.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import _accel, dataio
from .dataio import FormatError
from .net import NetConfig
from .scene import CameraRig, SceneConfig
from .spikes import FiringConfig, IntensityClip, ResetMode, integrate_and_fire

log = logging.getLogger("spikedepth")

NET_KEYS = [f.name for f in fields(NetConfig)]
SCENE_KEYS = ["width", "height", "frames", "layer_count", "depth_range", "texture_mode",
              "motion_px_per_frame", "haze_distance", "haze_level", "texture_size_m"]
RIG_KEYS = ["focal_px", "baseline_m", "d_max"]

DEFAULTS = {
    "seed": 0,
    "out": "out",
    "threads": 1,
    "theta": 1.0,
    "reset_mode": None,  # clips: simulator default; scenes: dataset default
    **{f.name: f.default for f in fields(NetConfig)},
    **{k: getattr(SceneConfig(), k) for k in SCENE_KEYS},
    **{k: getattr(CameraRig(), k) for k in RIG_KEYS},
    # build-dataset
    "scenes": 60,
    "fractions": {"train": 0.7, "test": 0.2, "val": 0.1},
    # train
    "mode": "ugdf",
    "epochs": 200,
    "iterations": 300,
    "batch_size": 4,
    "lr": 2e-3,
    "lr_decayed": 0.66e-3,
    "lr_milestone": 35,
    # eval / report
    "branch": "all",
    "split": "test",
    "bin_edges": None,
}


class ConfigError(ValueError):
    pass


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} not found")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from None
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {unknown}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            cfg[key] = value
    if isinstance(cfg["depth_range"], list):
        cfg["depth_range"] = tuple(cfg["depth_range"])
    return cfg


def net_config(cfg) -> NetConfig:
    return NetConfig(**{k: cfg[k] for k in NET_KEYS})


def scene_config(cfg, seed=None) -> SceneConfig:
    return SceneConfig(seed=cfg["seed"] if seed is None else seed, **{k: cfg[k] for k in SCENE_KEYS})


def rig_config(cfg) -> CameraRig:
    return CameraRig(**{k: cfg[k] for k in RIG_KEYS})


def firing_config(cfg, default: FiringConfig = FiringConfig()) -> FiringConfig:
    mode = default.reset_mode if cfg["reset_mode"] is None else ResetMode(cfg["reset_mode"])
    return FiringConfig(theta=cfg["theta"], reset_mode=mode)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _load_map(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(np.float64)
    return dataio.read_dpth(path)[0].astype(np.float64)


# -- commands ----------------------------------------------------------------------


def cmd_simulate(args, cfg, out: Path) -> dict:
    if args.intensity:
        clip = IntensityClip(np.load(args.intensity))
        spikes = integrate_and_fire(clip, firing_config(cfg))
        dataio.write_spkv(out / "clip.spkv", spikes)
        return {"files": ["clip.spkv"], "spikes": int(spikes.sum()), "shape": list(spikes.shape)}
    rig = rig_config(cfg)
    from .scene import generate_scene

    sample = generate_scene(scene_config(cfg), rig)
    firing = firing_config(cfg, dataio.DATASET_FIRING)
    left = integrate_and_fire(sample.left_clip, firing)
    right = integrate_and_fire(sample.right_clip, firing)
    dataio.write_spkv(out / "left.spkv", left)
    dataio.write_spkv(out / "right.spkv", right)
    dataio.write_dpth(out / "right_depth.dpth", sample.right_depth_gt)
    return {"files": ["left.spkv", "right.spkv", "right_depth.dpth"],
            "layer_depths": sample.layer_depths.tolist(), "shape": list(left.shape)}


def cmd_build_dataset(args, cfg, out: Path) -> dict:
    manifest = dataio.build_dataset(out, cfg["scenes"], scene_config(cfg), rig_config(cfg),
                                    cfg["fractions"], cfg["seed"], firing_config(cfg, dataio.DATASET_FIRING))
    recs = dataio.read_manifest(manifest)
    counts = {s: sum(r.split == s for r in recs) for s in dataio.SPLITS}
    return {"manifest": str(manifest), "counts": counts}


def cmd_train(args, cfg, out: Path) -> dict:
    from .pipeline import TrainConfig, train

    tc = TrainConfig(mode=cfg["mode"], epochs=cfg["epochs"], iterations=cfg["iterations"],
                     batch_size=cfg["batch_size"], lr=cfg["lr"], lr_decayed=cfg["lr_decayed"],
                     lr_milestone=cfg["lr_milestone"], seed=cfg["seed"])
    return train(args.manifest, out, net_config(cfg), tc)


def cmd_eval(args, cfg, out: Path) -> dict:
    from .pipeline import BRANCHES, evaluate, summarize

    branches = BRANCHES if cfg["branch"] == "all" else (cfg["branch"],)
    res = evaluate(args.checkpoint, args.manifest, out, cfg["split"], branches, cfg["bin_edges"])
    print((out / "metrics.txt").read_text(), end="")
    return {"reports": summarize(res["reports"]), "intervals": asdict(res["intervals"])}


def cmd_fuse(args, cfg, out: Path) -> dict:
    from .fusion import guided_fusion

    mono, stereo = _load_map(args.mono), _load_map(args.stereo)
    sm, ss = _load_map(args.sigma_m), _load_map(args.sigma_s)
    res = guided_fusion(mono, stereo, sm, ss, cfg["d_max"])
    dataio.write_dpth(out / "fused.dpth", res.fused_depth)
    np.save(out / "mask.npy", res.mask)
    np.save(out / "threshold.npy", res.threshold)
    return {"mono_fraction": float(res.mask.mean()), "single_source": int(res.single_source.sum()),
            "files": ["fused.dpth", "mask.npy", "threshold.npy"]}


def cmd_gradcheck(args, cfg, out: Path) -> dict:
    from .ops import check_all_operators
    from .pipeline import composition_grad_check

    t0 = time.perf_counter()
    errors = check_all_operators(cfg["seed"])
    for name, err in errors.items():
        print(f"{name:<20} {err:.3e}")
    ok = all(e <= 1e-4 for e in errors.values())
    summary = {"operators": errors, "operator_tolerance": 1e-4}
    if not args.skip_composition:
        comp = composition_grad_check(cfg["seed"])
        print(f"{'composition':<20} {comp:.3e}")
        summary["composition"] = comp
        summary["composition_tolerance"] = 1e-3
        ok = ok and comp <= 1e-3
    summary["seconds"] = time.perf_counter() - t0
    summary["passed"] = ok
    return summary


def cmd_report(args, cfg, out: Path) -> dict:
    from .metrics import (IntervalReport, format_table, interval_csv, merge_interval_reports,
                          report_from_dict)
    from .pipeline import write_reports

    pooled, intervals = {}, []
    for d in args.inputs:
        d = Path(d)
        full = json.loads((d / "metrics_full.json").read_text())
        for branch, rep in full.items():
            r = report_from_dict(rep)
            pooled[branch] = pooled[branch] + r.sums if branch in pooled else r.sums
        if (d / "intervals.json").is_file():
            intervals.append(IntervalReport(**json.loads((d / "intervals.json").read_text())))
    if not pooled:
        raise ConfigError("no metrics found in the given inputs")
    from .metrics import MetricsReport

    reports = {b: MetricsReport.from_sums(s) for b, s in pooled.items()}
    if intervals and any(r.bin_edges != intervals[0].bin_edges for r in intervals):
        raise ConfigError("interval reports use different bin edges")
    interval = merge_interval_reports(intervals) if intervals else None
    write_reports(out, reports, interval)
    print(format_table(reports), end="")
    if interval is not None:
        print(interval_csv(interval), end="")
    return {"inputs": [str(p) for p in args.inputs], "reports": {k: v.to_dict() for k, v in reports.items()}}


COMMANDS = {
    "simulate": cmd_simulate,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "fuse": cmd_fuse,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker cap; 1 gives bitwise determinism")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spikedepth", description="Spike-camera stereo depth toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="spike one clip or one generated scene")
    s.add_argument("--intensity", help="T x H x W .npy intensity clip in [0, 1]")
    s.add_argument("--theta", type=float)
    s.add_argument("--reset-mode", choices=[m.value for m in ResetMode])
    _scene_flags(s)

    s = sub.add_parser("build-dataset", parents=[common], help="generate a scene dataset and manifest")
    s.add_argument("--scenes", type=int)
    s.add_argument("--theta", type=float)
    _scene_flags(s)

    s = sub.add_parser("train", parents=[common], help="train from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=["base", "ugdf"])
    s.add_argument("--window-width", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--iterations", type=int, help="cap on optimizer steps")
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    for k in ("base_channels", "max_disp", "hourglass_count", "fft_k", "hidden_rnn_channels"):
        s.add_argument("--" + k.replace("_", "-"), type=int)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", choices=list(dataio.SPLITS))
    s.add_argument("--branch", choices=["mono", "stereo", "fused", "ensemble", "all"])
    s.add_argument("--bin-edges", type=float, nargs="+")

    s = sub.add_parser("fuse", parents=[common], help="fuse precomputed maps (.dpth or .npy)")
    for k in ("mono", "stereo", "sigma-m", "sigma-s"):
        s.add_argument("--" + k, required=True)
    s.add_argument("--d-max", type=float)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    s.add_argument("--skip-composition", action="store_true")

    s = sub.add_parser("report", parents=[common], help="pool eval outputs into one table")
    s.add_argument("inputs", nargs="+", help="eval output directories")
    return p


def _scene_flags(s):
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--layer-count", type=int)
    s.add_argument("--texture-mode", choices=["checker", "noise", "stripes"])
    s.add_argument("--focal-px", type=float)
    s.add_argument("--baseline-m", type=float)
    s.add_argument("--d-max", type=float)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
        import torch

        torch.set_num_threads(cfg["threads"])
        _accel.set_threads(cfg["threads"])
        out = dataio.ensure_dir(cfg["out"])
        _write_json(out / "config.json", {"command": args.command, **cfg})
        summary = COMMANDS[args.command](args, cfg, out)
        _write_json(out / "summary.json", summary)
    except (ConfigError, FormatError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"spikedepth {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if args.command == "gradcheck" and not summary["passed"]:
        print("gradcheck: tolerance exceeded", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
