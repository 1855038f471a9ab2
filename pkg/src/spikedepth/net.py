"""Dual-branch spike depth network.

Pipeline per view: neuromorphic encoding (ConvGRU over time windows plus
temporal DFT magnitudes) -> shared 3-stage encoder at 1/8 resolution. The
right-view features feed a monocular decoder that predicts normalised depth
and an uncertainty map. Both views build a concatenation cost volume that is
aggregated by stacked 3D hourglasses and regressed with soft-argmin; a small
CNN on the last probability volume predicts the stereo uncertainty.

Disparity is predicted for the right view, which is the view with depth
supervision. The cost volume is built with the left view as reference, so
both feature maps are mirrored horizontally before matching and the
disparity maps are mirrored back afterwards.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import ops

SIGMA_MIN = 1e-3
SIGMA_MAX = 1.0 - 1e-3


@dataclass(frozen=True)
class NetConfig:
    base_channels: int = 32
    max_disp: int = 16
    hourglass_count: int = 3
    window_width: int = 24
    fft_k: int = 8
    hidden_rnn_channels: int = 8
    encoding_channels: int = 16
    agg_channels: int = 16

    def validate(self, height: int, width: int, frames: int) -> None:
        if self.max_disp < 1 or self.hourglass_count < 1:
            raise ValueError("max_disp and hourglass_count must be >= 1")
        if height % 8 or width % 8:
            raise ValueError(f"spatial dims must be divisible by 8, got {height}x{width}")
        if self.max_disp > width // 8:
            raise ValueError(f"max_disp {self.max_disp} exceeds W/8 = {width // 8}")
        for name, n in (("max_disp", self.max_disp), ("H/8", height // 8), ("W/8", width // 8)):
            if n % 2:
                raise ValueError(f"{name} = {n} is odd; the hourglass down/up path needs even extents")
        if not 1 <= self.window_width <= frames:
            raise ValueError(f"window_width must be in [1, {frames}]")
        if not 1 <= self.fft_k <= frames // 2 + 1:
            raise ValueError(f"fft_k must be in [1, {frames // 2 + 1}]")

    def to_dict(self) -> dict:
        return asdict(self)


# -- building blocks -------------------------------------------------------------


class ConvBN2d(nn.Sequential):
    def __init__(self, cin, cout, k=3, stride=1, act=True):
        layers = [nn.Conv2d(cin, cout, k, stride, k // 2, bias=False), nn.BatchNorm2d(cout)]
        if act:
            layers.append(nn.Mish())
        super().__init__(*layers)


class ConvBN3d(nn.Sequential):
    def __init__(self, cin, cout, k=3, stride=1, act=True):
        layers = [nn.Conv3d(cin, cout, k, stride, k // 2, bias=False), nn.BatchNorm3d(cout)]
        if act:
            layers.append(nn.Mish())
        super().__init__(*layers)


class ResBlock2d(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(ConvBN2d(ch, ch), ConvBN2d(ch, ch, act=False))

    def forward(self, x):
        return F.mish(self.body(x) + x)


class ConvGRUCell(nn.Module):
    def __init__(self, cin, hidden, k=3):
        super().__init__()
        self.hidden = hidden
        self.gates = nn.Conv2d(cin + hidden, 2 * hidden, k, padding=k // 2)
        self.cand = nn.Conv2d(cin + hidden, hidden, k, padding=k // 2)

    def forward(self, x, h):
        zr = torch.sigmoid(self.gates(torch.cat([x, h], 1)))
        z, r = zr.chunk(2, dim=1)
        c = torch.tanh(self.cand(torch.cat([x, r * h], 1)))
        return (1 - z) * h + z * c


# -- front end -----------------------------------------------------------------


def frequency_features(voxel: torch.Tensor, k: int) -> torch.Tensor:
    """B x T x H x W spikes -> B x k x H x W DFT magnitudes / T."""
    T = voxel.shape[1]
    return torch.fft.rfft(voxel, dim=1).abs()[:, :k] / T


class SpikeEncoding(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.rnn = ConvGRUCell(cfg.window_width, cfg.hidden_rnn_channels)
        self.merge = nn.Conv2d(cfg.hidden_rnn_channels + cfg.fft_k, cfg.encoding_channels, 1)

    def rnn_final_state(self, voxel):
        B, T, H, W = voxel.shape
        n = self.cfg.window_width
        s = T // n
        if s < 1:
            raise ValueError(f"window width {n} exceeds T = {T}")
        windows = voxel[:, :s * n].reshape(B, s, n, H, W)
        h = voxel.new_zeros(B, self.cfg.hidden_rnn_channels, H, W)
        for i in range(s):
            h = self.rnn(windows[:, i], h)
        return h

    def forward(self, voxel):
        h = self.rnn_final_state(voxel)
        freq = frequency_features(voxel, self.cfg.fft_k)
        return self.merge(torch.cat([h, freq], 1))


class SharedEncoder(nn.Module):
    """Three stride-2 stages, each followed by a residual block -> C x H/8 x W/8."""

    def __init__(self, cin, channels):
        super().__init__()
        c1 = max(channels // 2, 8)
        self.stages = nn.Sequential(
            ConvBN2d(cin, c1, stride=2), ResBlock2d(c1),
            ConvBN2d(c1, channels, stride=2), ResBlock2d(channels),
            ConvBN2d(channels, channels, stride=2), ResBlock2d(channels),
        )
        self.project = nn.Conv2d(channels, channels, 1, bias=False)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise ValueError(f"encoder input dims must be divisible by 8, got {h}x{w}")
        return self.project(self.stages(x))


# -- monocular branch ------------------------------------------------------------


class UpBlock(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.convs = nn.Sequential(ConvBN2d(cin, cout), ConvBN2d(cout, cout))

    def forward(self, x):
        return self.convs(ops.upsample_bilinear_2x(x))


class MonoDecoder(nn.Module):
    def __init__(self, channels):
        super().__init__()
        c1, c2 = max(channels // 2, 8), max(channels // 4, 8)
        self.up = nn.Sequential(UpBlock(channels, c1), UpBlock(c1, c2), UpBlock(c2, c2))
        self.head = nn.Conv2d(c2, 2, 1)

    def forward(self, feat):
        out = self.head(self.up(feat))
        depth_norm = torch.sigmoid(out[:, 0])
        sigma = torch.sigmoid(out[:, 1]).clamp(SIGMA_MIN, SIGMA_MAX)
        return depth_norm, sigma


# -- stereo branch -----------------------------------------------------------------


def build_cost_volume(left: torch.Tensor, right: torch.Tensor, max_disp: int) -> torch.Tensor:
    """B x 2C x D x H x W concatenation volume, left view as reference.

    Slice ``d`` holds ``left[..., w]`` next to ``right[..., w - d]``; right
    features shifted in from beyond the image border are zero.
    """
    if left.shape != right.shape:
        raise ValueError(f"feature shapes differ: {tuple(left.shape)} vs {tuple(right.shape)}")
    W = left.shape[-1]
    if not 1 <= max_disp <= W:
        raise ValueError(f"max_disp {max_disp} must be in [1, {W}]")
    slices = []
    for d in range(max_disp):
        shifted = F.pad(right[..., :W - d], (d, 0)) if d else right
        slices.append(torch.cat([left, shifted], 1))
    return torch.stack(slices, 2)


class Hourglass3d(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.down1 = ConvBN3d(ch, 2 * ch, stride=2)
        self.mid1 = ConvBN3d(2 * ch, 2 * ch)
        self.down2 = ConvBN3d(2 * ch, 2 * ch, stride=2)
        self.mid2 = ConvBN3d(2 * ch, 2 * ch)
        self.up1 = nn.ConvTranspose3d(2 * ch, 2 * ch, 3, stride=2, padding=1, bias=False)
        self.bn_up1 = nn.BatchNorm3d(2 * ch)
        self.up2 = nn.ConvTranspose3d(2 * ch, ch, 3, stride=2, padding=1, bias=False)
        self.bn_up2 = nn.BatchNorm3d(ch)

    def forward(self, x):
        a = self.mid1(self.down1(x))
        b = self.mid2(self.down2(a))
        u = F.mish(self.bn_up1(self.up1(b, output_size=a.shape[2:])) + a)
        return F.mish(self.bn_up2(self.up2(u, output_size=x.shape[2:])) + x)


class HourglassStack(nn.Module):
    def __init__(self, cin, ch, count):
        super().__init__()
        self.pre = nn.Sequential(ConvBN3d(cin, ch), ConvBN3d(ch, ch))
        self.hourglasses = nn.ModuleList(Hourglass3d(ch) for _ in range(count))
        self.heads = nn.ModuleList(
            nn.Sequential(ConvBN3d(ch, ch), nn.Conv3d(ch, 1, 3, padding=1)) for _ in range(count))

    def forward(self, cv):
        x = self.pre(cv)
        costs = []
        for hg, head in zip(self.hourglasses, self.heads):
            x = hg(x)
            costs.append(head(x).squeeze(1))
        return costs


def soft_argmin(costs: torch.Tensor, dim: int = 1):
    """Expected disparity under ``softmax(-costs)``; returns (disparity, probability)."""
    if not torch.all(torch.isfinite(costs.detach())):
        raise ValueError("soft_argmin received non-finite costs")
    prob = ops.softmax(-costs, axis=dim)
    shape = [1] * costs.dim()
    shape[dim] = costs.shape[dim]
    levels = torch.arange(costs.shape[dim], dtype=costs.dtype, device=costs.device).reshape(shape)
    return (prob * levels).sum(dim), prob


def upsample_disparity(disp_low: torch.Tensor, factor: int = 8) -> torch.Tensor:
    """B x h x w disparity at 1/factor resolution -> full resolution in pixels."""
    return ops.upsample_bilinear(disp_low.unsqueeze(1), factor).squeeze(1) * factor


class StereoUncertaintyHead(nn.Module):
    def __init__(self, max_disp):
        super().__init__()
        mid = max(max_disp // 2, 4)
        self.conv1 = nn.Conv2d(max_disp, mid, 3, padding=1)
        self.conv2 = nn.Conv2d(mid, 1, 3, padding=1)

    def forward(self, prob):
        s = torch.sigmoid(self.conv2(F.mish(self.conv1(prob))))
        s = s.clamp(SIGMA_MIN, SIGMA_MAX)
        return ops.upsample_bilinear(s, 8).squeeze(1)


# -- full network ---------------------------------------------------------------


class SpikeDepthNet(nn.Module):
    def __init__(self, cfg: NetConfig = NetConfig()):
        super().__init__()
        self.cfg = cfg
        C = cfg.base_channels
        self.encoding = SpikeEncoding(cfg)
        self.encoder = SharedEncoder(cfg.encoding_channels, C)
        self.mono = MonoDecoder(C)
        self.aggregate = HourglassStack(2 * C, cfg.agg_channels, cfg.hourglass_count)
        self.stereo_sigma = StereoUncertaintyHead(cfg.max_disp)

    def unary(self, voxel):
        return self.encoder(self.encoding(voxel))

    def forward(self, left, right):
        """``left``/``right``: B x T x H x W spike voxels as float tensors."""
        B, T, H, W = right.shape
        self.cfg.validate(H, W, T)
        feats = self.unary(torch.cat([left, right], 0))
        f_left, f_right = feats[:B], feats[B:]

        depth_norm, sigma_m = self.mono(f_right)

        cv = build_cost_volume(f_right.flip(-1), f_left.flip(-1), self.cfg.max_disp)
        costs = self.aggregate(cv)
        disparities, low_res = [], []
        prob = None
        for c in costs:
            d, prob = soft_argmin(c)
            d = d.flip(-1)
            low_res.append(d)
            disparities.append(upsample_disparity(d))
        prob = prob.flip(-1)
        sigma_s = self.stereo_sigma(prob)
        return {
            "depth_norm": depth_norm,
            "sigma_m": sigma_m,
            "disparities": disparities,
            "disparity": disparities[-1],
            "disparity_low": low_res,
            "prob": prob,
            "sigma_s": sigma_s,
        }


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
