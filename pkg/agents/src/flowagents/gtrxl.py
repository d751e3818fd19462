"""Gated Transformer-XL building blocks.

Each block applies masked multi-head self-attention over [memory, tokens]
followed by a position-wise feed-forward network, with GRU-style gated
residual connections and layer normalization around both. Memories are the
block outputs from the previous forward pass, treated as constants
(stop-gradient), giving recurrence across environment steps.
"""

from __future__ import annotations

import math

import torch
from torch import nn


class GruGate(nn.Module):
    """GRU-style gate combining the skip stream x with the new candidate y.

    The update-gate bias starts positive so a fresh block behaves close to
    the identity map, which stabilizes early training.
    """

    def __init__(self, dim: int, gate_bias: float = 2.0):
        super().__init__()
        self.w_r = nn.Linear(dim, dim, bias=False)
        self.u_r = nn.Linear(dim, dim, bias=False)
        self.w_z = nn.Linear(dim, dim, bias=False)
        self.u_z = nn.Linear(dim, dim, bias=False)
        self.w_g = nn.Linear(dim, dim, bias=False)
        self.u_g = nn.Linear(dim, dim, bias=False)
        self.gate_bias = nn.Parameter(torch.full((dim,), float(gate_bias)))

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        r = torch.sigmoid(self.w_r(y) + self.u_r(x))
        z = torch.sigmoid(self.w_z(y) + self.u_z(x) - self.gate_bias)
        h = torch.tanh(self.w_g(y) + self.u_g(r * x))
        return (1.0 - z) * x + z * h


class MaskedSelfAttention(nn.Module):
    """Multi-head attention of tokens over [memory, tokens] with a causal
    mask: token i attends the whole memory plus tokens 0..i."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("embedding width must be divisible by heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.out = nn.Linear(dim, dim, bias=False)

    def forward(self, x: torch.Tensor, kv: torch.Tensor,
                mem_len: int) -> torch.Tensor:
        b, t, _ = x.shape
        s = kv.shape[1]
        q = self.q(x).view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(kv).view(b, s, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(kv).view(b, s, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        # causal over the current tokens, memory fully visible
        j = torch.arange(s, device=x.device)[None, :]
        i = torch.arange(t, device=x.device)[:, None]
        allowed = j <= (mem_len + i)
        scores = scores.masked_fill(~allowed, float("-inf"))
        att = torch.softmax(scores, dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, t, self.dim)
        return self.out(out)


class GtrxlBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ff_dim: int, gate_bias: float = 2.0):
        super().__init__()
        self.ln_attn = nn.LayerNorm(dim)
        self.attn = MaskedSelfAttention(dim, heads)
        self.gate_attn = GruGate(dim, gate_bias)
        self.ln_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.ReLU(),
                                nn.Linear(ff_dim, dim))
        self.gate_ff = GruGate(dim, gate_bias)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        """x: (batch, tokens, dim); memory: (batch, mem_len, dim)."""
        mem_len = memory.shape[1]
        h = self.ln_attn(torch.cat([memory.detach(), x], dim=1))
        a = self.attn(h[:, mem_len:], h, mem_len)
        x = self.gate_attn(x, torch.relu(a))
        f = self.ff(self.ln_ff(x))
        x = self.gate_ff(x, torch.relu(f))
        return x
