"""Synthetic FMCW radar: configuration, scenes, ADC synthesis and exact ground truth."""

from .adc import AdcCube, WindowError, read_adc, simulate_adc, write_adc
from .config import SPEED_OF_LIGHT, RadarConfig
from .scene import EgoMotion, Scatterer, SceneSpec, TrackedBox, advance_scene, relative_velocity, rigid_matrix
from .truth import GroundTruth, cluster_points, ground_truth, occupancy_from_points, random_scene

__all__ = [
    "AdcCube", "WindowError", "read_adc", "simulate_adc", "write_adc", "SPEED_OF_LIGHT",
    "RadarConfig", "EgoMotion", "Scatterer", "SceneSpec", "TrackedBox", "advance_scene",
    "relative_velocity", "rigid_matrix", "GroundTruth", "cluster_points", "ground_truth",
    "occupancy_from_points", "random_scene",
]
