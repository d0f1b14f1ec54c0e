"""Geometric action control: spherical-mixing policies, training and analysis."""
from gaclab.agents import GACAgent, GaussianSACAgent, ReplayBuffer, TrainConfig, TrainReport
from gaclab.envs import DirectionalShell, PointMass, make_env
from gaclab.geometry import (
    concentration_stats,
    expected_direction_mc,
    large_d_concentration,
    mixing_weight,
    normalize,
    sample_uniform_sphere,
    spherical_mix,
    spherical_mix_backward,
)

__version__ = "0.1.0"

__all__ = [
    "GACAgent",
    "GaussianSACAgent",
    "ReplayBuffer",
    "TrainConfig",
    "TrainReport",
    "DirectionalShell",
    "PointMass",
    "make_env",
    "concentration_stats",
    "expected_direction_mc",
    "large_d_concentration",
    "mixing_weight",
    "normalize",
    "sample_uniform_sphere",
    "spherical_mix",
    "spherical_mix_backward",
]
