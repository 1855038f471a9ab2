"""Stereo depth from spike-camera streams with uncertainty-guided fusion."""
from .fusion import FusionResult, distance_threshold, ensemble_fuse, fuse, fusion_mask, guided_fusion
from .metrics import IntervalReport, MetricsReport, compute_metrics, interval_accuracy
from .net import NetConfig, SpikeDepthNet
from .scene import CameraRig, SceneConfig, StereoSample, generate_scene
from .spikes import FiringConfig, IntensityClip, ResetMode, SpikeVoxel, integrate_and_fire

__version__ = "0.1.0"
