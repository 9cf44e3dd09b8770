from cnfp.agents.buffer import ReplayBuffer
from cnfp.agents.policy import FlowPolicy, box_chain, cnfp_chain, observation_scaler
from cnfp.agents.sac import (
    VARIANTS,
    CheckpointError,
    SacAgent,
    SacConfig,
    lagrange_update,
    penalty_reward,
    temperature_gradient,
)

__all__ = [
    "VARIANTS",
    "CheckpointError",
    "FlowPolicy",
    "ReplayBuffer",
    "SacAgent",
    "SacConfig",
    "box_chain",
    "cnfp_chain",
    "lagrange_update",
    "observation_scaler",
    "penalty_reward",
    "temperature_gradient",
]
