"""Simulated seabed exploration: worlds, depth camera, occupancy mapping,
discrete-action planners, PD tracking and an experiment harness."""

from .world import GenerationConfig, Pose2D, WorldSpec, generate_world, load_world, save_world

__version__ = "0.1.0"

__all__ = ["GenerationConfig", "Pose2D", "WorldSpec", "generate_world", "load_world", "save_world", "__version__"]
