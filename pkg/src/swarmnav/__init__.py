"""Cooperative multi-UAV navigation with a dual-transformer policy encoder.

The package is organized as:

- ``scenario``: procedural obstacle maps (generation, density oracle, files)
- ``world``: deterministic kinematic multi-UAV environment and rewards
- ``observe``: local observations, neighbor selection, encoder token triples
- ``nn``: differentiable primitives, parameter store, Adam, gradients
- ``checkpoint``: versioned binary parameter container
- ``encoder``: spatial/temporal transformer encoder, dynamics predictor
- ``policy``: Gaussian actor and value critic heads
- ``ppo``: rollout collection, advantage estimation, clipped-objective training
- ``harness``: evaluation metrics, ablations, sweeps, embedding export
- ``cli``: command-line entry point (``swarmnav``)
"""

from .scenario import (
    Obstacle,
    OccupancyEstimate,
    ScenarioMap,
    ScenarioSpec,
    SceneType,
    ShapeKind,
    generate_scenario,
    load_scenario,
    occupancy_fraction,
    save_scenario,
)
from .world import ControlAction, RewardConfig, UavState, World, WorldConfig, transfer_reward
from .observe import ObsConfig
from .encoder import AblationFlags, EncoderConfig
from .model import NavModel
from .ppo import PpoConfig, Trainer

__all__ = [
    "AblationFlags",
    "ControlAction",
    "EncoderConfig",
    "NavModel",
    "ObsConfig",
    "Obstacle",
    "OccupancyEstimate",
    "PpoConfig",
    "RewardConfig",
    "ScenarioMap",
    "ScenarioSpec",
    "SceneType",
    "ShapeKind",
    "Trainer",
    "UavState",
    "World",
    "WorldConfig",
    "generate_scenario",
    "load_scenario",
    "occupancy_fraction",
    "save_scenario",
    "transfer_reward",
]
