"""On-demand federated learning simulator: volunteer devices, orchestrator
deployment requests, a cost-driven deep-Q selection agent, and baselines."""

from .core import (
    AreaId,
    Device,
    EnvState,
    ModelSpec,
    Placement,
    RoundReport,
    Transition,
    as_placement,
    available_long_enough,
    count_violations,
    fits,
)
from .cost import CostBreakdown, ObjectiveWeights, total_cost
from .data import ClientDataset, DatasetConfig
from .dqn import AgentConfig, DqnAgent, ReplayBuffer, run_episode, select_action_top_p
from .env import EnvConfig, MobilityModel, OnDemandEnv
from .fl import ClientUpdate, GlobalModel, fedavg
from .harness import ExperimentConfig, default_config, high_mobility_config, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "AreaId",
    "ClientDataset",
    "ClientUpdate",
    "CostBreakdown",
    "DatasetConfig",
    "Device",
    "DqnAgent",
    "EnvConfig",
    "EnvState",
    "ExperimentConfig",
    "GlobalModel",
    "MobilityModel",
    "ModelSpec",
    "ObjectiveWeights",
    "OnDemandEnv",
    "Placement",
    "ReplayBuffer",
    "RoundReport",
    "Transition",
    "as_placement",
    "available_long_enough",
    "count_violations",
    "default_config",
    "fedavg",
    "fits",
    "high_mobility_config",
    "run_episode",
    "run_experiment",
    "select_action_top_p",
    "total_cost",
    "__version__",
]
