"""Training loop and evaluation over a dataset manifest."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataio
from .fusion import ensemble_fuse, guided_fusion
from .losses import LossWeights, disparity_loss, silog_depth_loss, total_loss, uncertainty_loss
from .metrics import (MetricsReport, assemble_report, compute_metrics, default_bin_edges, format_table,
                      interval_accuracy, interval_csv, merge_interval_reports, report_records, report_to_dict)
from .net import NetConfig, SpikeDepthNet, parameter_count
from .optim import AdamState, adam_step, step_lr
from .scene import CameraRig

log = logging.getLogger(__name__)

BRANCHES = ("mono", "stereo", "fused", "ensemble")
LOG_COLUMNS = {
    "base": ["step", "loss_disp", "loss_depth", "total"],
    "ugdf": ["step", "loss_disp", "loss_depth", "loss_mono_unc", "loss_ster_unc", "total"],
}


@dataclass
class TrainConfig:
    mode: str = "ugdf"
    epochs: int = 200
    iterations: int | None = 300
    batch_size: int = 4
    lr: float = 2e-3
    lr_decayed: float = 0.66e-3
    lr_milestone: int = 35
    seed: int = 0
    alpha: tuple = (0.5, 0.7, 1.0)
    eta: float = 0.1


@dataclass
class Split:
    left: np.ndarray   # N x T x H x W uint8
    right: np.ndarray
    depth: np.ndarray  # N x H x W float64, NaN invalid
    rig: CameraRig
    names: list = field(default_factory=list)

    def __len__(self):
        return self.depth.shape[0]


def load_split(manifest, split: str) -> Split:
    manifest = Path(manifest)
    recs = [r for r in dataio.read_manifest(manifest) if r.split == split]
    if not recs:
        raise ValueError(f"manifest {manifest} has no {split!r} records")
    rigs = {r.rig for r in recs}
    if len(rigs) != 1:
        raise ValueError("all records of a split must share one camera rig")
    ls, rs, ds = [], [], []
    for r in recs:
        left, right, depth = dataio.load_sample(manifest.parent, r)
        ls.append(left)
        rs.append(right)
        ds.append(depth)
    return Split(np.stack(ls), np.stack(rs), np.stack(ds), recs[0].rig, [r.right_depth for r in recs])


def stereo_depth(disparity: torch.Tensor, rig: CameraRig) -> torch.Tensor:
    """Metric depth from disparity, capped at ``d_max``."""
    return rig.fb / disparity.clamp(min=rig.fb / rig.d_max)


def compute_losses(out: dict, depth: torch.Tensor, rig: CameraRig, mode: str, weights: LossWeights):
    valid = torch.isfinite(depth) & (depth > 0)
    safe = torch.where(valid, depth, torch.ones_like(depth))
    gt_disp = torch.where(valid, rig.fb / safe, torch.full_like(depth, float("nan")))
    gt_norm = torch.where(valid, (safe / rig.d_max).clamp(max=1.0), torch.full_like(depth, float("nan")))
    parts = {
        "loss_disp": disparity_loss(out["disparities"], gt_disp, valid, weights),
        "loss_depth": silog_depth_loss(out["depth_norm"] * rig.d_max, gt_norm * rig.d_max, valid, weights.eta),
    }
    if mode == "ugdf":
        parts["loss_mono_unc"] = uncertainty_loss(out["depth_norm"], gt_norm, out["sigma_m"], valid)
        ster_norm = stereo_depth(out["disparity"], rig) / rig.d_max
        parts["loss_ster_unc"] = uncertainty_loss(ster_norm, gt_norm, out["sigma_s"], valid)
    return total_loss(mode, parts)


def _to_tensor(a):
    return torch.from_numpy(np.ascontiguousarray(a)).float()


def train(manifest, out_dir, net_cfg: NetConfig = NetConfig(), cfg: TrainConfig = TrainConfig()) -> dict:
    """Train from scratch on the ``train`` split; writes checkpoint, log and summary.

    The returned summary carries ``initial_loss``/``final_loss``: the mean
    total loss over the first and the last 10 iterations.
    """
    if cfg.mode not in LOG_COLUMNS:
        raise ValueError(f"mode must be base or ugdf, got {cfg.mode!r}")
    out = dataio.ensure_dir(out_dir)
    data = load_split(manifest, "train")
    T, H, W = data.left.shape[1:]
    net_cfg.validate(H, W, T)
    weights = LossWeights(tuple(cfg.alpha), cfg.eta)
    if len(weights.alpha) != net_cfg.hourglass_count:
        raise ValueError("one loss weight per hourglass output is required")

    torch.manual_seed(cfg.seed)
    net = SpikeDepthNet(net_cfg)
    net.train()
    params = list(net.parameters())
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    per_epoch = max(1, n // cfg.batch_size)
    max_iter = cfg.epochs * per_epoch if cfg.iterations is None else min(cfg.iterations, cfg.epochs * per_epoch)

    columns = LOG_COLUMNS[cfg.mode] + ["lr", "forward_ms"]
    history = []
    step = 0
    t_start = time.perf_counter()
    with open(out / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        epoch = 0
        while step < max_iter:
            state.lr = step_lr(epoch, cfg.lr, cfg.lr_decayed, cfg.lr_milestone)
            order = rng.permutation(n)
            for b in range(per_epoch):
                if step >= max_iter:
                    break
                idx = np.sort(order[b * cfg.batch_size:(b + 1) * cfg.batch_size])
                left, right = _to_tensor(data.left[idx]), _to_tensor(data.right[idx])
                depth = torch.from_numpy(data.depth[idx]).float()
                t0 = time.perf_counter()
                pred = net(left, right)
                fwd_ms = 1e3 * (time.perf_counter() - t0)
                loss, parts = compute_losses(pred, depth, data.rig, cfg.mode, weights)
                grads = torch.autograd.grad(loss, params, allow_unused=True)
                adam_step(params, grads, state)
                step += 1
                history.append(parts["total"])
                writer.writerow([step] + [f"{parts[c]:.6g}" for c in LOG_COLUMNS[cfg.mode][1:]]
                                + [f"{state.lr:.3g}", f"{fwd_ms:.1f}"])
                if step % 25 == 0:
                    log.info("step %d total %.4f", step, parts["total"])
            epoch += 1

    dataio.save_checkpoint(out / "model.ugdf", dataio.module_arrays(net))
    meta = {"net": net_cfg.to_dict(), "rig": data.rig.to_dict(), "mode": cfg.mode}
    (out / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    k = min(10, len(history))
    summary = {
        "iterations": step,
        "epochs": epoch,
        "initial_loss": float(np.mean(history[:k])),
        "final_loss": float(np.mean(history[-k:])),
        "seconds": time.perf_counter() - t_start,
        "parameters": parameter_count(net),
        "checkpoint": str(out / "model.ugdf"),
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def load_model(checkpoint) -> tuple[SpikeDepthNet, dict]:
    checkpoint = Path(checkpoint)
    meta = json.loads(checkpoint.with_suffix(".json").read_text())
    net = SpikeDepthNet(NetConfig(**meta["net"]))
    dataio.load_module_arrays(net, dataio.load_checkpoint(checkpoint))
    net.eval()
    return net, meta


@torch.no_grad()
def predict(net: SpikeDepthNet, left: np.ndarray, right: np.ndarray, rig: CameraRig) -> dict:
    """Per-branch metric depth maps for one voxel pair (T x H x W each)."""
    out = net(_to_tensor(left[None]), _to_tensor(right[None]))
    mono = (out["depth_norm"][0].double() * rig.d_max).numpy()
    stereo = stereo_depth(out["disparity"][0].double(), rig).numpy()
    sigma_m = out["sigma_m"][0].double().numpy()
    sigma_s = out["sigma_s"][0].double().numpy()
    fused = guided_fusion(mono, stereo, sigma_m, sigma_s, rig.d_max)
    return {
        "mono": mono,
        "stereo": stereo,
        "fused": fused.fused_depth,
        "ensemble": ensemble_fuse(mono, stereo),
        "sigma_m": sigma_m,
        "sigma_s": sigma_s,
        "fusion_mask": fused.mask,
        "threshold": fused.threshold,
    }


def evaluate(checkpoint, manifest, out_dir=None, split: str = "test", branches=BRANCHES, bin_edges=None) -> dict:
    net, _ = load_model(checkpoint)
    data = load_split(manifest, split)
    edges = bin_edges or default_bin_edges(data.rig.d_max)
    per_branch = {b: [] for b in branches}
    intervals = []
    for i in range(len(data)):
        preds = predict(net, data.left[i], data.right[i], data.rig)
        gt = data.depth[i]
        for b in branches:
            per_branch[b].append(compute_metrics(preds[b], gt))
        intervals.append(interval_accuracy({k: preds[k] for k in ("mono", "stereo", "fused")}, gt, edges))
    reports = {b: assemble_report(r) for b, r in per_branch.items()}
    interval = merge_interval_reports(intervals)
    if out_dir is not None:
        write_reports(out_dir, reports, interval)
    return {"reports": reports, "intervals": interval}


def write_reports(out_dir, reports: dict, interval=None) -> None:
    out = dataio.ensure_dir(out_dir)
    (out / "metrics.txt").write_text(format_table(reports))
    (out / "metrics.jsonl").write_text(report_records(reports))
    (out / "metrics_full.json").write_text(
        json.dumps({k: report_to_dict(v) for k, v in reports.items()}, indent=2, sort_keys=True))
    if interval is not None:
        (out / "intervals.csv").write_text(interval_csv(interval))
        (out / "intervals.json").write_text(json.dumps(asdict(interval), indent=2, sort_keys=True))


def summarize(reports: dict[str, MetricsReport]) -> dict:
    return {k: v.to_dict() for k, v in reports.items()}


def composition_grad_check(seed: int = 0, max_checks: int = 3) -> float:
    """Finite-difference check of encode -> encoder -> both branches -> ugdf loss.

    Toy shapes (T=8, 16x32, batch 2) in float64; ``max_checks`` coordinates
    are sampled from every parameter tensor. Batch norm runs on running
    statistics collected by one warm-up pass: at these shapes the deepest
    3D stage normalizes over two elements, which makes batch statistics far
    too curved for a 1e-3 central difference. The training-mode batch norm
    gradient is covered by the operator suite.
    """
    from torch.func import functional_call

    from .ops import grad_check

    cfg = NetConfig(base_channels=8, max_disp=4, hourglass_count=3, window_width=4, fft_k=3,
                    hidden_rnn_channels=4, encoding_channels=4, agg_channels=4)
    rig = CameraRig(focal_px=125.0, baseline_m=2.0, d_max=500.0)
    torch.manual_seed(seed)
    net = SpikeDepthNet(cfg).double().train()
    g = torch.Generator().manual_seed(seed)
    left = (torch.rand(2, 8, 16, 32, generator=g) < 0.4).double()
    right = (torch.rand(2, 8, 16, 32, generator=g) < 0.4).double()
    depth = 60.0 + 90.0 * torch.rand(2, 16, 32, generator=g, dtype=torch.float64)
    with torch.no_grad():
        net(left, right)
    net.eval()
    names = [n for n, _ in net.named_parameters()]
    params = [p.detach().clone() for _, p in net.named_parameters()]
    weights = LossWeights()

    def fn(*ps):
        out = functional_call(net, dict(zip(names, ps)), (left, right))
        return compute_losses(out, depth, rig, "ugdf", weights)[0]

    return grad_check(fn, params, seed=seed, max_checks=max_checks)
