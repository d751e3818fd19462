"""Clipped-surrogate PPO over the episode protocol, with the optional
contrastive flow-prediction auxiliary loss for the flow-aware model.

Rollouts are collected one environment step at a time; the recurrent state
(observation/flow buffers and transformer memories) is saved per step with
stopped gradients, so the update phase can recompute forward passes for
arbitrary minibatches of steps in parallel.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .client import EngineClient
from .contrastive import FlowProjection, contrastive_loss
from .model import AgentConfig, HybridActionDist, make_model

OBS_SIZE = 53


@dataclass
class PpoConfig:
    gamma: float = 0.98
    gae_lambda: float = 0.92
    clip: float = 0.2
    learning_rate: float = 5e-4
    epochs: int = 4
    minibatch: int = 512
    value_coef: float = 0.5
    entropy_coef: float = 0.004
    max_grad_norm: float = 0.5
    steps_per_iteration: int = 2048
    aux_weight: float = 0.15
    negatives: int = 16
    temperature: float = 0.1
    # fixed positive scaling of rewards inside the trainer; policy-invariant,
    # keeps value targets O(1) so the value loss cannot drown the surrogate
    reward_scale: float = 0.1


class RolloutBuffer:
    FIELDS = ("obs", "flow", "patch", "reward", "done", "value", "logp",
              "next_flow")

    def __init__(self):
        self.data = {f: [] for f in self.FIELDS}
        self.raw_actions = []
        self.states = []
        self.episode_returns = []
        self.episode_outcomes = []

    def add(self, **kw):
        for f in self.FIELDS:
            self.data[f].append(kw[f])
        self.raw_actions.append(kw["raw_action"])
        self.states.append(kw["state"])

    def __len__(self):
        return len(self.data["obs"])

    def stack(self):
        out = {f: torch.stack(self.data[f]) for f in
               ("obs", "flow", "patch", "next_flow")}
        out["reward"] = torch.tensor(self.data["reward"])
        out["done"] = torch.tensor(self.data["done"], dtype=torch.bool)
        out["value"] = torch.stack(self.data["value"])
        out["logp"] = torch.stack(self.data["logp"])
        i_psi = torch.stack([a[0] for a in self.raw_actions])
        i_theta = torch.stack([a[1] for a in self.raw_actions])
        u = torch.stack([a[2] for a in self.raw_actions])
        out["raw_action"] = (i_psi, i_theta, u)
        state_keys = self.states[0].keys()
        stacked_state = {}
        for key in state_keys:
            if key == "mems":
                n_layers = len(self.states[0]["mems"])
                stacked_state["mems"] = [
                    torch.cat([s["mems"][l] for s in self.states])
                    for l in range(n_layers)
                ]
            else:
                stacked_state[key] = torch.cat([s[key] for s in self.states])
        out["state"] = stacked_state
        return out


def _state_slice(state: dict, idx: torch.Tensor) -> dict:
    out = {}
    for key, val in state.items():
        if key == "mems":
            out["mems"] = [m[idx] for m in val]
        else:
            out[key] = val[idx]
    return out


def compute_gae(rewards, values, dones, last_value, gamma, lam):
    n = rewards.shape[0]
    adv = torch.zeros(n)
    next_adv = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    returns = adv + values
    return adv, returns


def _to_tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=np.float32))


class ProtocolRunner:
    """Drives one protocol session with a recurrent model."""

    def __init__(self, client: EngineClient, model: nn.Module, bins: int,
                 seed: int = 0):
        self.client = client
        self.model = model
        self.bins = bins
        self.episode_seed = seed
        self._needs_reset = True
        self._episode_return = 0.0
        self.state = None
        self.obs = None
        self.flow = None
        self.patch = None

    def _reset(self):
        resp = self.client.reset(seed=self.episode_seed)
        self.episode_seed += 1
        self.obs = _to_tensor(resp["obs"])
        self.flow = _to_tensor(resp["flow"])
        self.patch = _to_tensor(resp["flow_patch"])
        self.state = self.model.initial_state(1)
        self._episode_return = 0.0
        self._needs_reset = False

    @torch.no_grad()
    def collect(self, buffer: RolloutBuffer, n_steps: int):
        self.model.eval()
        for _ in range(n_steps):
            if self._needs_reset:
                self._reset()
            logits, value, _, new_state = self.model(
                self.obs.unsqueeze(0), self.flow.unsqueeze(0),
                self.patch.unsqueeze(0), self.state)
            dist = HybridActionDist(logits, self.bins)
            action, raw = dist.sample()
            logp = dist.log_prob(raw)
            resp = self.client.step(action[0].tolist())
            self._episode_return += resp["reward"]
            buffer.add(
                obs=self.obs, flow=self.flow, patch=self.patch,
                reward=float(resp["reward"]), done=bool(resp["done"]),
                value=value[0], logp=logp[0],
                raw_action=(raw[0][0].clone(), raw[1][0].clone(), raw[2][0].clone()),
                state={k: (v if k != "mems" else v)
                       for k, v in self.state.items()},
                next_flow=_to_tensor(resp["flow"]),
            )
            if resp["done"]:
                buffer.episode_returns.append(self._episode_return)
                buffer.episode_outcomes.append(resp["event"])
                self._needs_reset = True
            else:
                self.obs = _to_tensor(resp["obs"])
                self.flow = _to_tensor(resp["flow"])
                self.patch = _to_tensor(resp["flow_patch"])
                self.state = new_state

    @torch.no_grad()
    def bootstrap_value(self) -> float:
        if self._needs_reset:
            return 0.0
        _, value, _, _ = self.model(
            self.obs.unsqueeze(0), self.flow.unsqueeze(0),
            self.patch.unsqueeze(0), self.state)
        return float(value[0])


def ppo_losses(model: nn.Module, projection, batch, idx, cfg: PpoConfig,
               bins: int, advantages, returns,
               generator: torch.Generator | None = None) -> dict:
    """All loss components on one minibatch of independent steps."""
    obs = batch["obs"][idx]
    flow = batch["flow"][idx]
    patch = batch["patch"][idx]
    state = _state_slice(batch["state"], idx)
    logits, value, flow_pred, _ = model(obs, flow, patch, state)
    dist = HybridActionDist(logits, bins)
    raw = tuple(a[idx] for a in batch["raw_action"])
    logp_new = dist.log_prob(raw)
    ratio = torch.exp(logp_new - batch["logp"][idx])
    adv = advantages[idx]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    surr = torch.minimum(ratio * adv,
                         torch.clamp(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv)
    policy_loss = -surr.mean()
    value_loss = torch.nn.functional.mse_loss(value, returns[idx])
    entropy = dist.entropy().mean()

    aux = torch.zeros(())
    if flow_pred is not None:
        target = batch["next_flow"][idx]
        k = min(cfg.negatives, len(idx) - 1)
        if k > 0:
            neg_idx = torch.randint(0, len(idx), (len(idx), k),
                                    generator=generator)
            negatives = target[neg_idx]
        else:
            negatives = None
        aux = contrastive_loss(flow_pred, target, negatives, projection,
                               cfg.temperature)

    total = (policy_loss + cfg.value_coef * value_loss
             - cfg.entropy_coef * entropy + cfg.aux_weight * aux)
    return {"policy": policy_loss, "value": value_loss, "entropy": entropy,
            "aux": aux, "total": total}


def train(algorithm: str, client: EngineClient, iterations: int = 20,
          agent_cfg: AgentConfig | None = None, ppo_cfg: PpoConfig | None = None,
          seed: int = 0, out_dir: str | None = None,
          time_budget_s: float | None = None,
          stop_fn=None, keep_best: bool = False) -> dict:
    """Run PPO training against a live engine session.

    Writes per-iteration metric records (mean return, SR, CR over the
    iteration's completed episodes) and a final checkpoint when ``out_dir``
    is given. ``stop_fn(metrics) -> bool`` can end training early. With
    ``keep_best`` the returned model carries the weights of the iteration
    with the highest success rate (mean return as tie-break) instead of the
    last ones.
    """
    agent_cfg = agent_cfg or AgentConfig()
    ppo_cfg = ppo_cfg or PpoConfig()
    torch.manual_seed(seed)
    engine_cfg = client.config()
    model = make_model(algorithm, agent_cfg, engine_cfg)
    projection = FlowProjection() if model.uses_flow else None
    params = list(model.parameters())
    if projection is not None:
        params += list(projection.parameters())
    opt = torch.optim.Adam(params, lr=ppo_cfg.learning_rate)
    runner = ProtocolRunner(client, model, agent_cfg.action_bins, seed=seed)
    gen = torch.Generator().manual_seed(seed)

    history = []
    best = None
    best_weights = None
    t_start = time.time()
    for it in range(iterations):
        buffer = RolloutBuffer()
        runner.collect(buffer, ppo_cfg.steps_per_iteration)
        batch = buffer.stack()
        last_value = runner.bootstrap_value()
        advantages, returns = compute_gae(
            ppo_cfg.reward_scale * batch["reward"], batch["value"],
            batch["done"], last_value, ppo_cfg.gamma, ppo_cfg.gae_lambda)

        model.train()
        n = len(buffer)
        for _ in range(ppo_cfg.epochs):
            perm = torch.randperm(n, generator=gen)
            for s in range(0, n, ppo_cfg.minibatch):
                idx = perm[s:s + ppo_cfg.minibatch]
                if len(idx) < 2:
                    continue
                losses = ppo_losses(model, projection, batch, idx, ppo_cfg,
                                    agent_cfg.action_bins, advantages, returns,
                                    generator=gen)
                if not torch.isfinite(losses["total"]):
                    raise RuntimeError("divergence guard: non-finite loss")
                opt.zero_grad()
                losses["total"].backward()
                nn.utils.clip_grad_norm_(params, ppo_cfg.max_grad_norm)
                opt.step()

        outcomes = buffer.episode_outcomes
        n_ep = max(len(outcomes), 1)
        metrics = {
            "iteration": it,
            "steps": len(buffer),
            "episodes": len(outcomes),
            "mean_return": (float(np.mean(buffer.episode_returns))
                            if buffer.episode_returns else 0.0),
            "success_rate": outcomes.count("target") / n_ep,
            "crash_rate": outcomes.count("collision") / n_ep,
            "elapsed_s": time.time() - t_start,
        }
        history.append(metrics)
        if keep_best:
            score = (metrics["success_rate"], metrics["mean_return"])
            if best is None or score > best:
                best = score
                best_weights = {k: v.detach().clone()
                                for k, v in model.state_dict().items()}
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "metrics.jsonl"), "a",
                      encoding="utf-8") as f:
                f.write(json.dumps(metrics, sort_keys=True) + "\n")
        if stop_fn is not None and stop_fn(metrics):
            break
        if time_budget_s is not None and time.time() - t_start > time_budget_s:
            break

    if keep_best and best_weights is not None:
        model.load_state_dict(best_weights)

    if out_dir:
        ckpt = {"algorithm": algorithm, "model": model.state_dict(),
                "agent_cfg": asdict(agent_cfg), "ppo_cfg": asdict(ppo_cfg)}
        if projection is not None:
            ckpt["projection"] = projection.state_dict()
        torch.save(ckpt, os.path.join(out_dir, "checkpoint.pt"))
    return {"model": model, "projection": projection, "history": history}


@torch.no_grad()
def evaluate_policy(client: EngineClient, model: nn.Module, bins: int,
                    episodes: int, base_seed: int = 0,
                    deterministic: bool = True) -> dict:
    """Seeded evaluation; returns SR/CR/mean return over the episodes."""
    model.eval()
    outcomes = []
    returns = []
    for ep in range(episodes):
        resp = client.reset(seed=base_seed + ep)
        state = model.initial_state(1)
        obs = _to_tensor(resp["obs"])
        flow = _to_tensor(resp["flow"])
        patch = _to_tensor(resp["flow_patch"])
        total = 0.0
        done = False
        while not done:
            logits, _, _, state = model(obs.unsqueeze(0), flow.unsqueeze(0),
                                        patch.unsqueeze(0), state)
            dist = HybridActionDist(logits, bins)
            action, _ = dist.mode() if deterministic else dist.sample()
            resp = client.step(action[0].tolist())
            total += resp["reward"]
            done = resp["done"]
            if not done:
                obs = _to_tensor(resp["obs"])
                flow = _to_tensor(resp["flow"])
                patch = _to_tensor(resp["flow_patch"])
        outcomes.append(resp["event"])
        returns.append(total)
    n = len(outcomes)
    return {
        "episodes": n,
        "success_rate": outcomes.count("target") / n,
        "crash_rate": outcomes.count("collision") / n,
        "mean_return": float(np.mean(returns)),
        "outcomes": outcomes,
    }
