"""Training entry point: python -m flowagents.train --algo ppo_gtrxl_flow ..."""

from __future__ import annotations

import argparse
import json
import sys

from .client import EngineClient
from .model import AgentConfig
from .ppo import PpoConfig, evaluate_policy, train


def load_configs(path: str | None) -> tuple[AgentConfig, PpoConfig]:
    """Optional JSON config file with "agent" and "ppo" sections whose keys
    override the AgentConfig / PpoConfig defaults."""
    agent_kw: dict = {}
    ppo_kw: dict = {}
    if path:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        agent_kw = raw.get("agent", {})
        ppo_kw = raw.get("ppo", {})
    return AgentConfig(**agent_kw), PpoConfig(**ppo_kw)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flowagents-train")
    parser.add_argument("--algo", required=True,
                        choices=["ppo_lstm", "ppo_gtrxl", "ppo_gtrxl_flow"])
    parser.add_argument("--data", required=True, help="engine dataset root")
    parser.add_argument("--tcp", help="connect to HOST:PORT instead of spawning")
    parser.add_argument("--config", help="JSON file with agent/ppo sections")
    parser.add_argument("--iterations", type=int, default=20)
    parser.add_argument("--steps-per-iteration", type=int)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--aux-weight", type=float)
    parser.add_argument("--time-budget", type=float, help="seconds")
    parser.add_argument("--out", default="runs/latest")
    parser.add_argument("--eval-episodes", type=int, default=0)
    args = parser.parse_args(argv)

    tcp = None
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        tcp = (host or "127.0.0.1", int(port))
    client = EngineClient(dataset=args.data, tcp=tcp)
    agent_cfg, ppo_cfg = load_configs(args.config)
    if args.steps_per_iteration is not None:
        ppo_cfg.steps_per_iteration = args.steps_per_iteration
    if args.aux_weight is not None:
        ppo_cfg.aux_weight = args.aux_weight
    try:
        out = train(args.algo, client, iterations=args.iterations,
                    agent_cfg=agent_cfg, ppo_cfg=ppo_cfg, seed=args.seed,
                    out_dir=args.out, time_budget_s=args.time_budget)
        summary = {"algorithm": args.algo,
                   "iterations": len(out["history"]),
                   "final": out["history"][-1] if out["history"] else None}
        if args.eval_episodes > 0:
            summary["evaluation"] = evaluate_policy(
                client, out["model"], agent_cfg.action_bins,
                episodes=args.eval_episodes, base_seed=10_000 + args.seed)
            summary["evaluation"].pop("outcomes")
        print(json.dumps(summary, sort_keys=True))
    finally:
        client.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
