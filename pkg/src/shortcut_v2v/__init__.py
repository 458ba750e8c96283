"""Temporal-redundancy compression for video-to-video translation.

A full teacher pass runs only every ``alpha`` frames; in between, a
lightweight shortcut block estimates the teacher's decoder-layer features
from cached reference features and the current frame's encoder features via
coarse-to-fine deformable alignment and adaptive blending.
"""

from .block import ShortcutBlock, ShortcutConfig
from .dataio import SyntheticVideoSpec, VideoRecord, generate_video, load_video, save_video
from .losses import LossWeights
from .ops import adabd, bilinear_sample, deformable_conv, global_align
from .scheduler import ReferenceCache, ScheduleConfig, VideoSchedule, run_video
from .teacher import ToyTranslator, split_for

__version__ = "0.1.0"

__all__ = [
    "ShortcutBlock",
    "ShortcutConfig",
    "SyntheticVideoSpec",
    "VideoRecord",
    "generate_video",
    "load_video",
    "save_video",
    "LossWeights",
    "adabd",
    "bilinear_sample",
    "deformable_conv",
    "global_align",
    "ReferenceCache",
    "ScheduleConfig",
    "VideoSchedule",
    "run_video",
    "ToyTranslator",
    "split_for",
    "__version__",
]
