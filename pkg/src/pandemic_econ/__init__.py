"""Pandemic-economy simulator with two-level policy-gradient training of regional and federal policies."""
from .sim import ModulationParams, RegionState, WorldParams, simulate_schedule, world_step
from .welfare import WelfareConfig, compute_normalization, estimate_alpha_hat
from .env import EpisodeConfig, InitialConditions, PandemicEnv
from .policy import PolicyParams
from .train import TrainConfig

__all__ = [
    "EpisodeConfig", "InitialConditions", "ModulationParams", "PandemicEnv", "PolicyParams",
    "RegionState", "TrainConfig", "WelfareConfig", "WorldParams", "compute_normalization",
    "estimate_alpha_hat", "simulate_schedule", "world_step",
]
