"""Contrastive auxiliary loss on predicted vs. true local flow (InfoNCE).

Predicted and target flows pass through a shared projection network, are
L2-normalized, and scored by scaled dot products. With negatives the loss is

    L = -log( exp(sim+) / (exp(sim+) + sum_j exp(sim_j-)) )

and without negatives it reduces to -sim+.
"""

from __future__ import annotations

import torch
from torch import nn

EPS = 1e-8


class FlowProjection(nn.Module):
    """Two fully-connected layers with ReLU and layer normalization."""

    def __init__(self, in_dim: int = 3, hidden: int = 64, out_dim: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, out_dim), nn.LayerNorm(out_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def _normalize(e: torch.Tensor) -> torch.Tensor:
    return e / e.norm(dim=-1, keepdim=True).clamp_min(EPS)


def contrastive_loss(pred: torch.Tensor, target: torch.Tensor,
                     negatives: torch.Tensor | None = None,
                     projection: nn.Module | None = None,
                     temperature: float = 0.1) -> torch.Tensor:
    """Mean InfoNCE loss over the batch.

    pred, target: (batch, d); negatives: (batch, K, d) or None. The same
    projection embeds all three (identity if none is given).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    proj = projection if projection is not None else (lambda x: x)
    e_pred = _normalize(proj(pred))
    e_true = _normalize(proj(target))
    sim_pos = (e_pred * e_true).sum(dim=-1) / temperature
    if negatives is None or negatives.shape[-2] == 0:
        return (-sim_pos).mean()
    e_neg = _normalize(proj(negatives))
    sim_neg = torch.einsum("bd,bkd->bk", e_pred, e_neg) / temperature
    logits = torch.cat([sim_pos.unsqueeze(-1), sim_neg], dim=-1)
    return (torch.logsumexp(logits, dim=-1) - sim_pos).mean()
