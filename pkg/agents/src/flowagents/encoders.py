"""Input encoders: proprioceptive observations, flow history, flow patch."""

from __future__ import annotations

import torch
from torch import nn


class ObsEncoder(nn.Module):
    """Per-timestep MLP projection of buffered observations into tokens."""

    def __init__(self, obs_size: int, dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(obs_size, dim), nn.ReLU(),
                                 nn.Linear(dim, dim))

    def forward(self, obs_buf: torch.Tensor) -> torch.Tensor:
        # (batch, buf_len, obs_size) -> (batch, buf_len, dim)
        return self.net(obs_buf)


class FlowHistoryEncoder(nn.Module):
    """Multiscale temporal convolutions (kernels 3 and 5) fused linearly,
    then a GRU for longer-term dynamics; per-timestep outputs normalized."""

    def __init__(self, dim: int, history: int):
        super().__init__()
        if history < 5:
            raise ValueError("flow history must cover the largest kernel (5)")
        self.conv3 = nn.Conv1d(3, dim, kernel_size=3, padding=1)
        self.conv5 = nn.Conv1d(3, dim, kernel_size=5, padding=2)
        self.fuse = nn.Linear(2 * dim, dim)
        self.gru = nn.GRU(dim, dim, batch_first=True)
        self.norm = nn.LayerNorm(dim)

    def forward(self, flow_buf: torch.Tensor) -> torch.Tensor:
        # (batch, history, 3) -> (batch, history, dim)
        x = flow_buf.transpose(1, 2)
        feats = torch.cat([torch.relu(self.conv3(x)),
                           torch.relu(self.conv5(x))], dim=1)
        fused = torch.relu(self.fuse(feats.transpose(1, 2)))
        out, _ = self.gru(fused)
        return self.norm(out)


class FlowPatchEncoder(nn.Module):
    """Small CNN turning the local flow patch into one token."""

    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, kernel_size=3, padding=1), nn.ReLU(),
            nn.Conv2d(16, dim, kernel_size=3, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
        )

    def forward(self, patch: torch.Tensor) -> torch.Tensor:
        # (batch, P, P, 3) -> (batch, dim)
        x = patch.permute(0, 3, 1, 2)
        return self.net(x).flatten(1)
