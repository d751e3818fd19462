"""flownav: navigation engine for unsteady 3D flow fields.

Gridded velocity snapshots are stored as overlapping disk blocks and queried
with tricubic space / cubic time Catmull-Rom interpolation; a UAV point-mass
POMDP environment with ray-traced obstacle sensing and a shaped reward runs
on top, together with a Zermelo trajectory-optimization baseline and an
NDJSON episode protocol for external learning agents.
"""

__version__ = "0.1.0"

from .dynamics import ControlInput, IntegratorConfig, UavState, derivative, rk4_step
from .env import (
    EpisodeConfig,
    EpisodeResult,
    NavigationEnv,
    Observation,
    RewardBreakdown,
    RewardConfig,
    evaluate,
    normalize_returns,
    run_episode,
)
from .geometry import Box, ray_box_intersect, wrap_angle
from .interp import FlowField, cubic_temporal_interp, idw_blend, tricubic_interp
from .sensors import RayFan, SensorReading, scan
from .store import (
    BlockStore,
    FieldBlock,
    MeshMeta,
    StoreError,
    clamp_position,
    ingest,
    quantize_position,
)
from .synth import SyntheticFlowSpec, synth_dataset
from .zermelo import FrozenFlow, SplineTrajectory, ZermeloConfig, optimize, replay, trajectory_cost

__all__ = [
    "__version__",
    "Box", "ray_box_intersect", "wrap_angle",
    "MeshMeta", "FieldBlock", "BlockStore", "StoreError",
    "ingest", "clamp_position", "quantize_position",
    "FlowField", "tricubic_interp", "cubic_temporal_interp", "idw_blend",
    "UavState", "ControlInput", "IntegratorConfig", "derivative", "rk4_step",
    "RayFan", "SensorReading", "scan",
    "NavigationEnv", "Observation", "RewardConfig", "RewardBreakdown",
    "EpisodeConfig", "EpisodeResult", "evaluate", "normalize_returns", "run_episode",
    "SplineTrajectory", "ZermeloConfig", "FrozenFlow", "optimize", "replay",
    "trajectory_cost",
    "SyntheticFlowSpec", "synth_dataset",
]
