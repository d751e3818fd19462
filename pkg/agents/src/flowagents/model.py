"""Actor-critic models: PPO+LSTM, PPO+GTrXL, and the flow-aware PPO+GTrXL.

The flow-aware model follows the token pipeline: observation and flow-history
buffers shift in the newest inputs, three encoders embed them, the flow
tokens, patch token, and observation tokens are concatenated, a learnable
positional encoding is added, and stacked GTrXL blocks with per-layer
recurrent memories process the sequence. The policy and value heads read the
last observation token; the flow-prediction head reads the last flow token.

Actions are hybrid: yaw and pitch changes are binned categoricals over the
action box, thrust is a tanh-squashed Gaussian on [-2, 2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn
from torch.distributions import Categorical, Normal

from .encoders import FlowHistoryEncoder, FlowPatchEncoder, ObsEncoder
from .gtrxl import GtrxlBlock

OBS_SIZE = 53
ANGLE_MAX = math.pi / 4
THRUST_MAX = 2.0
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


@dataclass
class AgentConfig:
    width: int = 64                # embedding width
    units: int = 2                 # stacked GTrXL blocks
    heads: int = 4
    ff_width: int = 128
    memory_len: int = 16
    gate_bias: float = 2.0
    flow_history: int = 8          # H
    obs_history: int = 8
    patch_size: int = 5
    action_bins: int = 7
    lstm_width: int = 64

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if self.memory_len < 1:
            raise ValueError("memory_len must be >= 1")


class ObsNormalizer(nn.Module):
    """Fixed affine normalization of the 53-float observation vector.

    Scales are derived once from the engine's config (domain box, sensor
    range), so normalization is deterministic and checkpointable. Without an
    engine config it is the identity.
    """

    def __init__(self, shift, scale):
        super().__init__()
        self.register_buffer("shift", torch.as_tensor(shift, dtype=torch.float32))
        self.register_buffer("scale", torch.as_tensor(scale, dtype=torch.float32))

    @classmethod
    def identity(cls) -> "ObsNormalizer":
        return cls(torch.zeros(OBS_SIZE), torch.ones(OBS_SIZE))

    @classmethod
    def from_engine_config(cls, cfg: dict | None) -> "ObsNormalizer":
        if cfg is None:
            return cls.identity()
        dmin = torch.tensor(cfg["domain_min"], dtype=torch.float32)
        dmax = torch.tensor(cfg["domain_max"], dtype=torch.float32)
        center = 0.5 * (dmin + dmax)
        half = 0.5 * (dmax - dmin)
        diag = float(torch.linalg.norm(dmax - dmin))
        rng = float(cfg.get("sensor_range", 2.0))
        shift = torch.zeros(OBS_SIZE)
        scale = torch.ones(OBS_SIZE)
        scale[0:4] = math.pi                 # angles and relative bearings
        shift[4], scale[4] = 0.5 * diag, 0.5 * diag   # target distance
        shift[5:8], scale[5:8] = center, half         # position in the domain
        shift[8:], scale[8:] = 0.5 * rng, 0.5 * rng   # ray readings
        return cls(shift, scale)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return (obs - self.shift) / self.scale


class HybridActionDist:
    """Binned yaw/pitch categoricals plus a squashed Gaussian thrust."""

    def __init__(self, logits: torch.Tensor, bins: int):
        self.bins = bins
        self.centers = torch.linspace(-ANGLE_MAX, ANGLE_MAX, bins,
                                      device=logits.device)
        self.cat_psi = Categorical(logits=logits[..., :bins])
        self.cat_theta = Categorical(logits=logits[..., bins:2 * bins])
        mu = logits[..., 2 * bins]
        log_std = logits[..., 2 * bins + 1].clamp(LOG_STD_MIN, LOG_STD_MAX)
        self.normal = Normal(mu, log_std.exp())

    def sample(self):
        i_psi = self.cat_psi.sample()
        i_theta = self.cat_theta.sample()
        u = self.normal.rsample()
        raw = (i_psi, i_theta, u)
        return self.to_env_action(raw), raw

    def mode(self):
        i_psi = self.cat_psi.logits.argmax(dim=-1)
        i_theta = self.cat_theta.logits.argmax(dim=-1)
        u = self.normal.mean
        raw = (i_psi, i_theta, u)
        return self.to_env_action(raw), raw

    def to_env_action(self, raw):
        i_psi, i_theta, u = raw
        thrust = THRUST_MAX * torch.tanh(u)
        return torch.stack([thrust, self.centers[i_psi], self.centers[i_theta]],
                           dim=-1)

    def log_prob(self, raw) -> torch.Tensor:
        i_psi, i_theta, u = raw
        lp = self.cat_psi.log_prob(i_psi) + self.cat_theta.log_prob(i_theta)
        # tanh-squash correction: log det of d(thrust)/du
        lp_v = self.normal.log_prob(u)
        lp_v = lp_v - (math.log(THRUST_MAX)
                       + 2.0 * (math.log(2.0) - u - nn.functional.softplus(-2.0 * u)))
        return lp + lp_v

    def entropy(self) -> torch.Tensor:
        return (self.cat_psi.entropy() + self.cat_theta.entropy()
                + self.normal.entropy())


def policy_head_size(bins: int) -> int:
    """Two binned angle heads plus (mu, log_std) for thrust."""
    return 2 * bins + 2


def init_policy_head(head: nn.Linear, bins: int):
    """Start near a straight-flight prior without cutting gradient flow.

    The bias favors the zero-turn bins so early trajectories are ballistic
    rather than a heading random walk, and the thrust log-std starts below
    one. Weights stay orthogonal and moderately scaled: zeroing them would
    make d(loss)/d(features) vanish and freeze the shared trunk.
    """
    nn.init.orthogonal_(head.weight, gain=0.5)
    nn.init.zeros_(head.bias)
    with torch.no_grad():
        head.bias[bins // 2] = 2.0
        head.bias[bins + bins // 2] = 2.0
        head.bias[2 * bins + 1] = -0.5


class LstmActorCritic(nn.Module):
    """Baseline: observation MLP into an LSTM cell, policy/value heads."""

    uses_flow = False

    def __init__(self, cfg: AgentConfig, engine_cfg: dict | None = None):
        super().__init__()
        self.cfg = cfg
        self.normalize = ObsNormalizer.from_engine_config(engine_cfg)
        self.encoder = nn.Sequential(nn.Linear(OBS_SIZE, cfg.lstm_width), nn.ReLU())
        self.cell = nn.LSTMCell(cfg.lstm_width, cfg.lstm_width)
        self.policy = nn.Linear(cfg.lstm_width, policy_head_size(cfg.action_bins))
        init_policy_head(self.policy, cfg.action_bins)
        self.value = nn.Linear(cfg.lstm_width, 1)

    def initial_state(self, batch: int, device=None) -> dict:
        z = torch.zeros(batch, self.cfg.lstm_width, device=device)
        return {"h": z.clone(), "c": z.clone()}

    def forward(self, obs, flow=None, patch=None, state=None):
        x = self.encoder(self.normalize(obs))
        h, c = self.cell(x, (state["h"], state["c"]))
        return (self.policy(h), self.value(h).squeeze(-1), None,
                {"h": h, "c": c})


class GtrxlActorCritic(nn.Module):
    """PPO+GTrXL: buffered observation tokens through gated transformer
    blocks with recurrent memories; heads read the last observation token."""

    uses_flow = False

    def __init__(self, cfg: AgentConfig, engine_cfg: dict | None = None):
        super().__init__()
        self.cfg = cfg
        self.normalize = ObsNormalizer.from_engine_config(engine_cfg)
        self.obs_encoder = ObsEncoder(OBS_SIZE, cfg.width)
        self.pos = nn.Parameter(0.02 * torch.randn(cfg.obs_history, cfg.width))
        self.blocks = nn.ModuleList([
            GtrxlBlock(cfg.width, cfg.heads, cfg.ff_width, cfg.gate_bias)
            for _ in range(cfg.units)
        ])
        self.policy = nn.Linear(cfg.width, policy_head_size(cfg.action_bins))
        init_policy_head(self.policy, cfg.action_bins)
        self.value = nn.Linear(cfg.width, 1)

    def initial_state(self, batch: int, device=None) -> dict:
        cfg = self.cfg
        return {
            "obs_buf": torch.zeros(batch, cfg.obs_history, OBS_SIZE, device=device),
            "mems": [torch.zeros(batch, cfg.memory_len, cfg.width, device=device)
                     for _ in range(cfg.units)],
        }

    def forward(self, obs, flow=None, patch=None, state=None):
        obs_buf = torch.cat([state["obs_buf"][:, 1:], obs.unsqueeze(1)], dim=1)
        x = self.obs_encoder(self.normalize(obs_buf)) + self.pos[None, :, :]
        mem_outs = []
        for block, mem in zip(self.blocks, state["mems"]):
            x = block(x, mem)
            mem_outs.append(torch.cat([mem, x], dim=1)[:, -self.cfg.memory_len:]
                            .detach())
        last = x[:, -1]
        new_state = {"obs_buf": obs_buf, "mems": mem_outs}
        return (self.policy(last), self.value(last).squeeze(-1), None, new_state)


class FlowAwareActorCritic(nn.Module):
    """Flow-aware PPO+GTrXL with the auxiliary flow-prediction head."""

    uses_flow = True

    def __init__(self, cfg: AgentConfig, engine_cfg: dict | None = None):
        super().__init__()
        self.cfg = cfg
        self.normalize = ObsNormalizer.from_engine_config(engine_cfg)
        self.obs_encoder = ObsEncoder(OBS_SIZE, cfg.width)
        self.flow_encoder = FlowHistoryEncoder(cfg.width, cfg.flow_history)
        self.patch_encoder = FlowPatchEncoder(cfg.width)
        n_tokens = cfg.flow_history + 1 + cfg.obs_history
        self.pos = nn.Parameter(0.02 * torch.randn(n_tokens, cfg.width))
        self.blocks = nn.ModuleList([
            GtrxlBlock(cfg.width, cfg.heads, cfg.ff_width, cfg.gate_bias)
            for _ in range(cfg.units)
        ])
        self.policy = nn.Linear(cfg.width, policy_head_size(cfg.action_bins))
        init_policy_head(self.policy, cfg.action_bins)
        self.value = nn.Linear(cfg.width, 1)
        self.flow_pred = nn.Linear(cfg.width, 3)

    def initial_state(self, batch: int, device=None) -> dict:
        cfg = self.cfg
        return {
            "obs_buf": torch.zeros(batch, cfg.obs_history, OBS_SIZE, device=device),
            "flow_buf": torch.zeros(batch, cfg.flow_history, 3, device=device),
            "mems": [torch.zeros(batch, cfg.memory_len, cfg.width, device=device)
                     for _ in range(cfg.units)],
        }

    def forward(self, obs, flow=None, patch=None, state=None):
        cfg = self.cfg
        obs_buf = torch.cat([state["obs_buf"][:, 1:], obs.unsqueeze(1)], dim=1)
        flow_buf = torch.cat([state["flow_buf"][:, 1:], flow.unsqueeze(1)], dim=1)

        flow_tokens = self.flow_encoder(flow_buf)
        patch_token = self.patch_encoder(patch).unsqueeze(1)
        obs_tokens = self.obs_encoder(self.normalize(obs_buf))
        x = torch.cat([flow_tokens, patch_token, obs_tokens], dim=1)
        x = x + self.pos[None, :, :]

        mem_outs = []
        for block, mem in zip(self.blocks, state["mems"]):
            x = block(x, mem)
            mem_outs.append(torch.cat([mem, x], dim=1)[:, -cfg.memory_len:]
                            .detach())

        last_obs = x[:, -1]
        last_flow = x[:, cfg.flow_history - 1]
        new_state = {"obs_buf": obs_buf, "flow_buf": flow_buf, "mems": mem_outs}
        return (self.policy(last_obs), self.value(last_obs).squeeze(-1),
                self.flow_pred(last_flow), new_state)


def make_model(algorithm: str, cfg: AgentConfig | None = None,
               engine_cfg: dict | None = None) -> nn.Module:
    cfg = cfg or AgentConfig()
    if algorithm == "ppo_lstm":
        return LstmActorCritic(cfg, engine_cfg)
    if algorithm == "ppo_gtrxl":
        return GtrxlActorCritic(cfg, engine_cfg)
    if algorithm == "ppo_gtrxl_flow":
        return FlowAwareActorCritic(cfg, engine_cfg)
    raise ValueError(f"unknown algorithm {algorithm!r}")
