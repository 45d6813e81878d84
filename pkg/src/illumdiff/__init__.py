"""Prompt-steered pyramid diffusion for illumination correction."""

from .diffusion import (
    LinearAlphaBar,
    NoiseSchedule,
    ScalingSchedule,
    ScheduleConfig,
    Schedules,
    build_schedules,
    forward_sample,
    resize_down,
    resize_up,
    reverse_step,
    sample,
)
from .model import ModelConfig, RestorationTransformer, dit_forward

__version__ = "0.1.0"

__all__ = [
    "LinearAlphaBar",
    "ModelConfig",
    "NoiseSchedule",
    "RestorationTransformer",
    "ScalingSchedule",
    "ScheduleConfig",
    "Schedules",
    "build_schedules",
    "dit_forward",
    "forward_sample",
    "resize_down",
    "resize_up",
    "reverse_step",
    "sample",
]
