"""flowagents: PPO agents for the flownav engine, via its NDJSON protocol."""

__version__ = "0.1.0"

from .client import EngineClient, ProtocolError
from .contrastive import FlowProjection, contrastive_loss
from .model import (
    AgentConfig,
    FlowAwareActorCritic,
    GtrxlActorCritic,
    HybridActionDist,
    LstmActorCritic,
    make_model,
    policy_head_size,
)
from .ppo import PpoConfig, evaluate_policy, ppo_losses, train

__all__ = [
    "__version__",
    "EngineClient", "ProtocolError",
    "FlowProjection", "contrastive_loss",
    "AgentConfig", "make_model", "policy_head_size", "HybridActionDist",
    "LstmActorCritic", "GtrxlActorCritic", "FlowAwareActorCritic",
    "PpoConfig", "train", "evaluate_policy", "ppo_losses",
]
