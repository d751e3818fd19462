"""POMDP navigation environment: observations, shaped reward, termination.

One episode samples a start before the first obstacle, a target after the
second, a random initial orientation, and a random starting snapshot; the
agent then has at most ``max_steps`` steps. Each step advances the point-mass
dynamics one RK4-substepped interval through the interpolated flow, traces
the sensor fan, and scores the seven shaped reward terms plus terminal
constants. Collision is tested at every RK4 substep so thin obstacles cannot
be tunneled through.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlInput, IntegratorConfig, UavState, rk4_step
from .geometry import Box, wrap_angle
from .interp import FlowField
from .sensors import N_RAYS, RayFan, SensorReading, scan

OBSERVATION_SIZE = 8 + N_RAYS

EVENT_TARGET = "target"
EVENT_COLLISION = "collision"
EVENT_OUT_OF_BOUNDS = "out_of_bounds"
EVENT_TIMEOUT = "timeout"
EVENTS = (EVENT_TARGET, EVENT_COLLISION, EVENT_OUT_OF_BOUNDS, EVENT_TIMEOUT)


class EnvError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class Observation:
    """Agent observation: angles, target bearing/distance, position, rays."""

    psi: float
    theta: float
    psi_target: float
    theta_target: float
    d_target: float
    x: float
    y: float
    z: float
    ray_distances: np.ndarray  # (45,)

    def as_array(self) -> np.ndarray:
        out = np.empty(OBSERVATION_SIZE)
        out[0:8] = (self.psi, self.theta, self.psi_target, self.theta_target,
                    self.d_target, self.x, self.y, self.z)
        out[8:] = self.ray_distances
        return out


@dataclass
class RewardConfig:
    sigma: float = 1.0            # transition scale
    xi: float = 1.0               # obstacle penalty magnitude
    beta: float = 5.0             # obstacle penalty sharpness
    r_free: float = 0.05          # free-space bonus
    step_penalty: float = 0.05    # constant per-step penalty (subtracted)
    target_radius: float = 0.25
    bonus_target: float = 10.0
    penalty_collision: float = 10.0
    penalty_oob: float = 5.0
    bonus_near: float = 1.0
    near_band: float = 0.5
    prox_coef: float = 0.2
    energy_coef: float = 0.2
    best_dir_coef: float = 0.06
    prox_distance: float = 1.0

    def __post_init__(self):
        for name in ("sigma", "xi", "beta", "r_free", "step_penalty", "target_radius",
                     "bonus_target", "penalty_collision", "penalty_oob", "bonus_near"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class RewardBreakdown:
    trans: float = 0.0
    obs: float = 0.0
    free: float = 0.0
    best: float = 0.0
    step: float = 0.0
    prox: float = 0.0
    energy: float = 0.0
    terminal: float = 0.0
    total: float = 0.0

    def finalize(self) -> "RewardBreakdown":
        self.total = (self.trans + self.obs + self.free + self.best + self.step
                      + self.prox + self.energy + self.terminal)
        return self

    def to_dict(self) -> dict:
        return {
            "trans": self.trans, "obs": self.obs, "free": self.free,
            "best": self.best, "step": self.step, "prox": self.prox,
            "energy": self.energy, "terminal": self.terminal, "total": self.total,
        }


def step_rewards(cfg: RewardConfig, prev_dist: float, new_dist: float,
                 d_min_obstacle: float, reading: SensorReading,
                 ground_velocity: np.ndarray, flow: np.ndarray) -> RewardBreakdown:
    """All per-step shaped terms; the terminal component is filled in later."""
    b = RewardBreakdown()
    b.trans = cfg.sigma * (prev_dist - new_dist)
    b.obs = -cfg.xi * math.exp(-cfg.beta * d_min_obstacle) if math.isfinite(d_min_obstacle) else 0.0
    b.free = cfg.r_free if reading.forward_free else 0.0
    if not reading.forward_free and reading.best_direction is not None:
        dphi, dtheta = reading.best_direction
        b.best = -cfg.best_dir_coef * (abs(dphi) + abs(dtheta))
    b.step = -cfg.step_penalty
    if new_dist <= cfg.prox_distance:
        b.prox = -cfg.prox_coef * float(np.linalg.norm(ground_velocity))
    b.energy = -cfg.energy_coef * float(np.linalg.norm(ground_velocity - flow))
    return b.finalize()


@dataclass
class EpisodeConfig:
    max_steps: int = 100
    margin: float = 0.1
    snapshot_range: tuple[int, int] | None = None  # half-open [lo, hi)
    pitch_limit: float = math.pi / 4  # initial pitch sampled in +-pitch_limit

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class EpisodeResult:
    outcome: str
    steps: int
    total_reward: float
    start: list
    target: list
    snapshot: int
    trajectory: list = field(default_factory=list)
    flow_faults: int = 0

    def to_summary(self) -> dict:
        return {
            "outcome": self.outcome,
            "steps": self.steps,
            "total_reward": self.total_reward,
            "start": self.start,
            "target": self.target,
            "snapshot": self.snapshot,
            "flow_faults": self.flow_faults,
        }


def write_trajectory_jsonl(result: EpisodeResult, path: str):
    """One JSON record per step: state vector, action, reward breakdown, event."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in result.trajectory:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


class NavigationEnv:
    """Episodic navigation through the interpolated unsteady flow.

    A single instance runs one episode at a time; several instances may share
    one read-only flow field.
    """

    def __init__(self, flow_field: FlowField,
                 reward: RewardConfig | None = None,
                 episode: EpisodeConfig | None = None,
                 integrator: IntegratorConfig | None = None,
                 fan: RayFan | None = None):
        self.field = flow_field
        self.mesh = flow_field.store.mesh
        self.reward_cfg = reward or RewardConfig()
        self.episode_cfg = episode or EpisodeConfig()
        self.integrator = integrator or IntegratorConfig()
        if self.integrator.cfl_extent is None:
            self.integrator.cfl_extent = float(np.min(self.mesh.block_extent()))
        self.fan = fan or RayFan()
        self.state: UavState | None = None
        self.target: np.ndarray | None = None
        self.snapshot: int | None = None
        self.done = True
        self.event: str | None = None
        self.steps = 0
        self.total_reward = 0.0
        self.flow_faults = 0
        self._prev_dist = 0.0
        self._trajectory: list[dict] = []
        self.last_flow = np.zeros(3)

    # -- sampling ---------------------------------------------------------

    def _sampling_regions(self) -> tuple[Box, Box]:
        m = self.episode_cfg.margin
        lo, hi = self.mesh.domain_min, self.mesh.domain_max
        obstacles = sorted(self.mesh.obstacles, key=lambda b: b.lo[0])
        if len(obstacles) >= 2:
            x_start_hi = obstacles[0].lo[0] - m
            x_target_lo = obstacles[-1].hi[0] + m
        else:
            span = hi[0] - lo[0]
            x_start_hi = lo[0] + 0.3 * span
            x_target_lo = hi[0] - 0.3 * span
        regions = {
            "start": ((lo[0] + m, lo[1] + m, lo[2] + m),
                      (x_start_hi, hi[1] - m, hi[2] - m)),
            "target": ((x_target_lo, lo[1] + m, lo[2] + m),
                       (hi[0] - m, hi[1] - m, hi[2] - m)),
        }
        for name, (blo, bhi) in regions.items():
            if any(l >= h for l, h in zip(blo, bhi)):
                raise EnvError("infeasible_region", f"{name} sampling region is empty")
        return (Box(lo=regions["start"][0], hi=regions["start"][1]),
                Box(lo=regions["target"][0], hi=regions["target"][1]))

    def _sample_point(self, rng: np.random.Generator, region: Box) -> np.ndarray:
        lo = np.array(region.lo)
        hi = np.array(region.hi)
        for _ in range(1000):
            p = lo + rng.random(3) * (hi - lo)
            if not any(box.contains(p) for box in self.mesh.obstacles):
                return p
        raise EnvError("infeasible_region", "could not sample a point outside obstacles")

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int | None = None, snapshot: int | None = None,
              start=None, target=None,
              orientation: tuple[float, float] | None = None) -> Observation:
        rng = np.random.default_rng(seed)
        start_box, target_box = self._sampling_regions()
        if start is None:
            start = self._sample_point(rng, start_box)
        else:
            start = np.asarray(start, dtype=float)
        if target is None:
            target = self._sample_point(rng, target_box)
        else:
            target = np.asarray(target, dtype=float)
        if orientation is None:
            psi = wrap_angle(rng.uniform(-math.pi, math.pi))
            theta = rng.uniform(-self.episode_cfg.pitch_limit, self.episode_cfg.pitch_limit)
        else:
            psi, theta = (wrap_angle(orientation[0]), wrap_angle(orientation[1]))
        if snapshot is None:
            lo, hi = self.episode_cfg.snapshot_range or (0, self.mesh.n_snapshots)
            snapshot = int(rng.integers(lo, hi))

        t0 = float(self.mesh.snapshot_times[snapshot])
        flow = self.field.velocity(start, t0)
        self.state = UavState(
            x=float(start[0]), y=float(start[1]), z=float(start[2]),
            u_g=float(flow[0]), v_g=float(flow[1]), w_g=float(flow[2]),
            psi=psi, theta=theta, t=t0,
        )
        self.target = target
        self.start = start
        self.snapshot = snapshot
        self.done = False
        self.event = None
        self.steps = 0
        self.total_reward = 0.0
        self.flow_faults = 0
        self._trajectory = []
        self._prev_dist = float(np.linalg.norm(start - target))
        self.last_flow = flow
        return self._observe()

    def _observe(self) -> Observation:
        s = self.state
        delta = self.target - s.position
        d = float(np.linalg.norm(delta))
        psi_t = wrap_angle(math.atan2(delta[1], delta[0]) - s.psi)
        theta_t = wrap_angle(math.atan2(delta[2], math.hypot(delta[0], delta[1])) - s.theta)
        reading = scan(s.position, s.psi, s.theta, self.mesh.obstacles, self.fan)
        self._last_reading = reading
        return Observation(
            psi=s.psi, theta=s.theta, psi_target=psi_t, theta_target=theta_t,
            d_target=d, x=s.x, y=s.y, z=s.z,
            ray_distances=reading.distances,
        )

    def _classify_position(self, p) -> str | None:
        if p[1] < 0.0 or any(box.contains(p) for box in self.mesh.obstacles):
            return EVENT_COLLISION
        if np.any(p < self.mesh.domain_min) or np.any(p > self.mesh.domain_max):
            return EVENT_OUT_OF_BOUNDS
        return None

    def step(self, action) -> tuple[Observation, RewardBreakdown, bool, str | None]:
        if self.done:
            raise EnvError("episode_done", "step() called after episode end")
        if not isinstance(action, ControlInput):
            action = ControlInput(*[float(a) for a in action])
        action = action.clamped()

        faults_before = self.field.failed_queries
        new_state, diag = rk4_step(self.state, action,
                                   lambda p, t: self.field.velocity(p, t),
                                   self.integrator)
        self.flow_faults += self.field.failed_queries - faults_before
        if diag.fault:
            raise EnvError("integration_fault", "non-finite state during RK4 step")
        self.state = new_state
        self.steps += 1

        event = None
        for p in diag.positions[1:]:
            event = self._classify_position(p)
            if event is not None:
                break

        obs = self._observe()
        new_dist = obs.d_target
        if event is None and new_dist <= self.reward_cfg.target_radius:
            event = EVENT_TARGET
        if event is None and self.steps >= self.episode_cfg.max_steps:
            event = EVENT_TIMEOUT

        d_min = min((box.surface_distance(new_state.position) for box in self.mesh.obstacles),
                    default=math.inf)
        flow = self.field.velocity(new_state.position, new_state.t)
        if self.field.last_query_failed:
            self.flow_faults += 1
        self.last_flow = flow
        breakdown = step_rewards(self.reward_cfg, self._prev_dist, new_dist, d_min,
                                 self._last_reading, new_state.ground_velocity, flow)
        if event is not None:
            terminal = 0.0
            if event == EVENT_TARGET:
                terminal += self.reward_cfg.bonus_target
            elif event == EVENT_COLLISION:
                terminal -= self.reward_cfg.penalty_collision
            elif event == EVENT_OUT_OF_BOUNDS:
                terminal -= self.reward_cfg.penalty_oob
            if abs(new_dist - self.reward_cfg.target_radius) < self.reward_cfg.near_band:
                terminal += self.reward_cfg.bonus_near
            breakdown.terminal = terminal
            breakdown.finalize()
            self.done = True
            self.event = event

        self._prev_dist = new_dist
        self.total_reward += breakdown.total
        self._trajectory.append({
            "state": [*new_state.as_array().tolist(), new_state.t],
            "action": list(action.as_tuple()),
            "reward": breakdown.to_dict(),
            "event": event,
        })
        return obs, breakdown, self.done, event

    def result(self) -> EpisodeResult:
        if not self.done:
            raise EnvError("episode_running", "episode has not finished")
        return EpisodeResult(
            outcome=self.event,
            steps=self.steps,
            total_reward=self.total_reward,
            start=self.start.tolist(),
            target=self.target.tolist(),
            snapshot=self.snapshot,
            trajectory=list(self._trajectory),
            flow_faults=self.flow_faults,
        )


def normalize_returns(returns) -> np.ndarray:
    """Affine map of raw returns onto [0, 1] by the global min and max."""
    r = np.asarray(returns, dtype=float)
    lo = r.min()
    hi = r.max()
    if hi == lo:
        raise ValueError("cannot normalize: max(returns) equals min(returns)")
    return (r - lo) / (hi - lo)


def run_episode(env: NavigationEnv, policy, seed: int | None = None,
                snapshot: int | None = None, **reset_kwargs) -> EpisodeResult:
    obs = env.reset(seed=seed, snapshot=snapshot, **reset_kwargs)
    if hasattr(policy, "reset"):
        policy.reset(seed)
    done = False
    while not done:
        action = policy(obs)
        obs, _, done, _ = env.step(action)
    return env.result()


def evaluate(env: NavigationEnv, policy, n_episodes: int, base_seed: int = 0,
             snapshot_range: tuple[int, int] | None = None,
             keep_trajectories: bool = False) -> dict:
    """Run seeded episodes and report success/crash rates and return stats.

    Seeds are base_seed + i, so the result is deterministic for a given
    (policy, config, dataset) triple. ``snapshot_range`` restricts the
    starting snapshots (e.g. a held-out evaluation split) for this run only.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    saved_range = env.episode_cfg.snapshot_range
    if snapshot_range is not None:
        env.episode_cfg.snapshot_range = snapshot_range
    outcomes = {e: 0 for e in EVENTS}
    returns = []
    lengths = []
    episodes = []
    for i in range(n_episodes):
        res = run_episode(env, policy, seed=base_seed + i)
        outcomes[res.outcome] += 1
        returns.append(res.total_reward)
        lengths.append(res.steps)
        ep = res.to_summary()
        ep["seed"] = base_seed + i
        if keep_trajectories:
            ep["trajectory"] = res.trajectory
        episodes.append(ep)
    env.episode_cfg.snapshot_range = saved_range
    returns = np.array(returns)
    lengths = np.array(lengths)
    return {
        "n_episodes": n_episodes,
        "base_seed": base_seed,
        "success_rate": outcomes[EVENT_TARGET] / n_episodes,
        "crash_rate": outcomes[EVENT_COLLISION] / n_episodes,
        "oob_rate": outcomes[EVENT_OUT_OF_BOUNDS] / n_episodes,
        "timeout_rate": outcomes[EVENT_TIMEOUT] / n_episodes,
        "mean_return": float(returns.mean()),
        "episode_length": {
            "mean": float(lengths.mean()),
            "min": int(lengths.min()),
            "max": int(lengths.max()),
        },
        "episodes": episodes,
    }
