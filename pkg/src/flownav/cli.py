"""Command-line entry points.

Subcommands: ingest, synth, query, episode, serve, zermelo, eval. Results go
to stdout as JSON; logs go to stderr. The dataset root defaults to the
FLOWNAV_DATA environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .env import (EpisodeConfig, NavigationEnv, RewardConfig, run_episode,
                  evaluate, write_trajectory_jsonl)
from .interp import FlowField
from .policies import make_policy
from .protocol import DEFAULT_PATCH_SIZE, EpisodeSession, serve_stdio, serve_tcp
from .store import BlockStore, MeshMeta, StoreError, ingest
from .synth import SyntheticFlowSpec, synth_dataset
from . import zermelo as zm

logger = logging.getLogger("flownav")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _emit(payload: dict):
    print(json.dumps(payload, sort_keys=True))


def _data_root(args) -> str:
    root = args.data or os.environ.get("FLOWNAV_DATA")
    if not root:
        raise CliError("missing_dataset", "no dataset: pass --data or set FLOWNAV_DATA")
    return root


def _open_store(args) -> BlockStore:
    try:
        return BlockStore(_data_root(args), cache_capacity=args.cache_capacity)
    except StoreError as e:
        raise CliError(e.code, str(e)) from e


def _make_env(args, store: BlockStore) -> NavigationEnv:
    field = FlowField(store, k=args.k)
    episode = EpisodeConfig(max_steps=args.max_steps)
    reward = None
    overrides = {
        name: getattr(args, name)
        for name in ("sigma", "target_radius")
        if getattr(args, name, None) is not None
    }
    if overrides:
        reward = RewardConfig(**overrides)
    return NavigationEnv(field, reward=reward, episode=episode)


def cmd_synth(args) -> dict:
    spec = SyntheticFlowSpec(
        grid_dims=(args.grid, args.grid, args.grid),
        n_snapshots=args.snapshots,
        dt=args.dt,
        freestream=args.freestream,
        wake_amplitude=args.wake_amplitude,
        perturbation_amplitude=args.perturbation,
        seed=args.seed,
    )
    store = synth_dataset(spec, _data_root(args))
    return {
        "dataset": store.root,
        "grid_dims": list(store.mesh.grid_dims),
        "snapshots": store.mesh.n_snapshots,
        "blocks_per_snapshot": store.n_blocks,
    }


def cmd_ingest(args) -> dict:
    mesh = MeshMeta.load(os.path.join(args.source, "mesh.json"))

    def source(s: int):
        with np.load(os.path.join(args.source, f"snap_{s:04d}.npz")) as f:
            return f["u"], f["v"], f["w"]

    store = ingest(source, mesh, _data_root(args))
    return {
        "dataset": store.root,
        "snapshots": store.mesh.n_snapshots,
        "blocks_per_snapshot": store.n_blocks,
    }


def cmd_query(args) -> dict:
    store = _open_store(args)
    field = FlowField(store, k=args.k)
    vel = field.velocity((args.x, args.y, args.z), args.t)
    return {
        "position": [args.x, args.y, args.z],
        "t": args.t,
        "k": args.k,
        "velocity": vel.tolist(),
        "extrapolated": field.extrapolated_queries > 0,
    }


def cmd_episode(args) -> dict:
    store = _open_store(args)
    env = _make_env(args, store)
    policy = make_policy(args.policy, seed=args.seed)
    result = run_episode(env, policy, seed=args.seed, snapshot=args.snapshot)
    if args.trajectory:
        write_trajectory_jsonl(result, args.trajectory)
    return result.to_summary()


def cmd_eval(args) -> dict:
    store = _open_store(args)
    env = _make_env(args, store)
    policy = make_policy(args.policy, seed=args.seed)
    snapshot_range = tuple(args.snapshots) if args.snapshots else None
    summary = evaluate(env, policy, n_episodes=args.episodes, base_seed=args.seed,
                       snapshot_range=snapshot_range)
    if not args.detailed:
        summary.pop("episodes")
    summary["policy"] = args.policy
    return summary


def cmd_zermelo(args) -> dict:
    store = _open_store(args)
    env = _make_env(args, store)
    rng = np.random.default_rng(args.seed)
    snapshot = args.snapshot if args.snapshot is not None else \
        int(rng.integers(0, store.mesh.n_snapshots))
    if args.start is None or args.target is None:
        start_box, target_box = env._sampling_regions()
        start = np.array(args.start) if args.start else env._sample_point(rng, start_box)
        target = np.array(args.target) if args.target else env._sample_point(rng, target_box)
    else:
        start, target = np.array(args.start), np.array(args.target)

    flow = zm.FrozenFlow.from_store(store, snapshot)
    cfg = zm.ZermeloConfig(quad_points=args.quad_points,
                           max_iterations=args.max_iterations)
    result = zm.optimize(start, target, flow, cfg,
                         obstacles=store.mesh.obstacles,
                         domain=(store.mesh.domain_min, store.mesh.domain_max),
                         snapshot=snapshot)
    s = np.linspace(0.0, 1.0, args.path_samples)
    out = {
        "start": start.tolist(),
        "target": target.tolist(),
        "snapshot": snapshot,
        "cost": result.cost,
        "breakdown": result.breakdown,
        "converged": result.converged,
        "iterations": len(result.history) - 1,
        "trajectory": result.trajectory.to_dict(),
        "path": result.trajectory.position(s).tolist(),
    }
    if args.replay:
        episode = zm.replay(result, env, flow)
        out["replay"] = episode.to_summary()
    return out


def cmd_serve(args) -> dict | None:
    store = _open_store(args)

    def session_factory():
        return EpisodeSession(_make_env(args, store), patch_size=args.patch_size)

    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        serve_tcp(host or "127.0.0.1", int(port), session_factory,
                  max_sessions=args.max_sessions)
        return None
    serve_stdio(session_factory())
    return None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flownav",
        description="Navigation engine for unsteady 3D flow fields.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--data", help="dataset root (default: $FLOWNAV_DATA)")
        p.add_argument("--cache-capacity", type=int, default=512)
        p.add_argument("--k", type=int, default=8, help="nearest blocks per query")
        p.add_argument("--max-steps", type=int, default=100)
        p.add_argument("--sigma", type=float,
                       help="transition-reward scale (default per RewardConfig)")
        p.add_argument("--target-radius", type=float,
                       help="target sphere radius (default per RewardConfig)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--data", help="output dataset root (default: $FLOWNAV_DATA)")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--snapshots", type=int, default=8)
    p.add_argument("--dt", type=float, default=0.08750)
    p.add_argument("--freestream", type=float, default=1.0)
    p.add_argument("--wake-amplitude", type=float, default=0.5)
    p.add_argument("--perturbation", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("ingest", help="ingest raw snapshots (mesh.json + snap_XXXX.npz)")
    p.add_argument("--source", required=True)
    p.add_argument("--data", help="output dataset root (default: $FLOWNAV_DATA)")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("query", help="interpolate the velocity at one point")
    add_common(p)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("episode", help="run one scripted episode")
    add_common(p)
    p.add_argument("--policy", default="greedy", choices=["greedy", "random", "hover"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snapshot", type=int)
    p.add_argument("--trajectory", help="write per-step JSONL to this path")
    p.set_defaults(fn=cmd_episode)

    p = sub.add_parser("eval", help="evaluate a policy over seeded episodes")
    add_common(p)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--policy", default="greedy", choices=["greedy", "random", "hover"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snapshots", type=int, nargs=2, metavar=("LO", "HI"),
                   help="restrict starting snapshots to [LO, HI), e.g. a held-out split")
    p.add_argument("--detailed", action="store_true", help="include per-episode records")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("zermelo", help="optimize and report a Zermelo trajectory")
    add_common(p)
    p.add_argument("--start", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--target", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--snapshot", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quad-points", type=int, default=200)
    p.add_argument("--max-iterations", type=int, default=400)
    p.add_argument("--path-samples", type=int, default=64)
    p.add_argument("--replay", action="store_true", help="also fly the plan in the environment")
    p.set_defaults(fn=cmd_zermelo)

    p = sub.add_parser("serve", help="serve the episode protocol (stdio or TCP)")
    add_common(p)
    p.add_argument("--tcp", metavar="HOST:PORT", help="listen on TCP instead of stdio")
    p.add_argument("--patch-size", type=int, default=DEFAULT_PATCH_SIZE)
    p.add_argument("--max-sessions", type=int, help="stop after this many sessions (TCP)")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=os.environ.get("FLOWNAV_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        payload = args.fn(args)
    except CliError as e:
        _emit({"error": {"code": e.code, "message": str(e)}})
        return 1
    except (StoreError, OSError, ValueError) as e:
        code = getattr(e, "code", type(e).__name__.lower())
        _emit({"error": {"code": code, "message": str(e)}})
        return 1
    if payload is not None:
        _emit(payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
