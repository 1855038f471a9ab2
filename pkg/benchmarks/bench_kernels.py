"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is warmed up once (numba compiles on first call), then the
best of N runs is reported.
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from spikedepth.metrics import metric_sums
from spikedepth.scene import CameraRig, SceneConfig, generate_scene
from spikedepth.spikes import FiringConfig, IntensityClip, integrate_and_fire


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    clip = IntensityClip(rng.random((100, 64, 128)))
    firing = FiringConfig()
    scene = replace(SceneConfig(), seed=1)
    rig = CameraRig()
    gt = rng.uniform(1, 500, (8, 64, 128))
    pred = gt * rng.uniform(0.5, 1.5, gt.shape)

    cases = {
        "integrate_and_fire 100x64x128": lambda nb: integrate_and_fire(clip, firing, use_numba=nb),
        "render scene pair 100x64x128": lambda nb: generate_scene(scene, rig, use_numba=nb),
        "metric sums 8x64x128": lambda nb: metric_sums(pred, gt, use_numba=nb),
    }
    print(f"{'kernel':<32}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fn in cases.items():
        t_nb = best_of(lambda: fn(True), args.repeat)
        t_np = best_of(lambda: fn(False), args.repeat)
        print(f"{name:<32}{1e3 * t_nb:>10.2f}{1e3 * t_np:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
