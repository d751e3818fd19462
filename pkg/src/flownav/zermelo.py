"""Open-loop Zermelo baseline: B-spline trajectory optimization.

The cost functional is

    J = T_f + integral( 0.5 chi^T R chi + phi_obs(x) ) dt
          + kappa * ||x(T_f) - x_target||^2

with chi = (yaw rate, pitch rate, thrust) recovered from the trajectory
velocity minus the flow through the point-mass kinematics, and
phi_obs(x) = sum_i alpha_i exp(-beta_i d_i(x)) over the obstacle boxes.
The flow is a single frozen snapshot sampled with trilinear interpolation.
Control-bound and domain violations enter as quadratic penalties, and the
finite-dimensional problem over control points and final time is solved with
a quasi-Newton method using numerically estimated gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import minimize

from .dynamics import ANGLE_STEP_MAX, ControlInput, THRUST_MAX
from .env import EpisodeResult, NavigationEnv
from .geometry import Box, wrap_angle
from .store import BlockStore, MeshMeta


class ZermeloError(Exception):
    pass


@dataclass
class SplineTrajectory:
    """Clamped uniform B-spline path x(s), s in [0, 1], flown over [0, T_f]."""

    control_points: np.ndarray  # (n, 3)
    duration: float
    degree: int = 3

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float)
        n = self.control_points.shape[0]
        if n < self.degree + 1:
            raise ZermeloError(f"need at least {self.degree + 1} control points, got {n}")
        if self.duration <= 0:
            raise ZermeloError("duration must be positive")

    @property
    def knots(self) -> np.ndarray:
        n = self.control_points.shape[0]
        p = self.degree
        interior = np.linspace(0.0, 1.0, n - p + 1)[1:-1]
        return np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])

    def _spline(self) -> BSpline:
        return BSpline(self.knots, self.control_points, self.degree, extrapolate=False)

    def position(self, s) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        return self._spline()(s)

    def velocity(self, s) -> np.ndarray:
        """Time derivative dx/dt at parameter s (chain rule through s = t/T_f)."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        return self._spline().derivative()(s) / self.duration

    def position_at_time(self, t) -> np.ndarray:
        return self.position(np.asarray(t, dtype=float) / self.duration)

    def path_length(self, samples: int = 2000) -> float:
        pts = self.position(np.linspace(0.0, 1.0, samples))
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    def to_dict(self) -> dict:
        return {
            "control_points": self.control_points.tolist(),
            "duration": self.duration,
            "degree": self.degree,
            "knots": self.knots.tolist(),
        }


@dataclass
class ZermeloConfig:
    control_weight: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))  # R
    kappa: float = 50.0
    alpha: float = 5.0           # obstacle penalty strength (scalar or per obstacle)
    beta: float = 8.0            # obstacle penalty sharpness (scalar or per obstacle)
    u_max: float = THRUST_MAX
    n_control_points: int = 12
    degree: int = 3
    quad_points: int = 200
    max_iterations: int = 400
    bound_weight: float = 5000.0   # stiff so plans stay flyable within u_max
    domain_weight: float = 100.0
    collision_weight: float = 200.0  # quadratic penalty on penetration depth
    speed_floor: float = 1e-9

    def __post_init__(self):
        r = np.asarray(self.control_weight, dtype=float)
        if r.shape != (3, 3) or not np.allclose(r, r.T):
            raise ZermeloError("control_weight must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(r) <= 0):
            raise ZermeloError("control_weight must be positive definite")
        if self.kappa <= 0 or np.any(np.asarray(self.alpha) <= 0) or np.any(np.asarray(self.beta) <= 0):
            raise ZermeloError("kappa, alpha, beta must be positive")
        self.control_weight = r


class FrozenFlow:
    """Trilinear sampler over one full reassembled snapshot."""

    def __init__(self, mesh: MeshMeta, u: np.ndarray, v: np.ndarray, w: np.ndarray):
        self.mesh = mesh
        self.data = np.stack([np.asarray(a, dtype=float) for a in (u, v, w)], axis=-1)
        if self.data.shape[:3] != mesh.grid_dims:
            raise ZermeloError(f"snapshot arrays do not match grid {mesh.grid_dims}")

    @classmethod
    def from_store(cls, store: BlockStore, snapshot: int) -> "FrozenFlow":
        u, v, w = store.reassemble_snapshot(snapshot)
        return cls(store.mesh, u, v, w)

    def sample(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mesh = self.mesh
        rel = (np.clip(pts, mesh.domain_min, mesh.domain_max) - mesh.domain_min) / mesh.spacing
        n = np.array(mesh.grid_dims)
        i0 = np.clip(np.floor(rel).astype(int), 0, n - 2)
        f = rel - i0
        out = np.zeros((pts.shape[0], 3))
        for dx in (0, 1):
            wx = (1.0 - f[:, 0]) if dx == 0 else f[:, 0]
            for dy in (0, 1):
                wy = (1.0 - f[:, 1]) if dy == 0 else f[:, 1]
                for dz in (0, 1):
                    wz = (1.0 - f[:, 2]) if dz == 0 else f[:, 2]
                    vals = self.data[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
                    out += (wx * wy * wz)[:, None] * vals
        return out


def _per_obstacle(value, n: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.size != n:
        raise ZermeloError(f"expected {n} per-obstacle values, got {arr.size}")
    return arr


def _box_distances(points: np.ndarray, box: Box) -> np.ndarray:
    lo = np.array(box.lo)
    hi = np.array(box.hi)
    d = np.maximum(np.maximum(lo - points, points - hi), 0.0)
    return np.linalg.norm(d, axis=1)


def _box_penetration(points: np.ndarray, box: Box) -> np.ndarray:
    """Depth inside the box (distance to the nearest face), 0 outside.

    The exponential obstacle cost is flat inside a box (d_i = 0 there); this
    depth restores an interior gradient for the collision penalty method.
    """
    lo = np.array(box.lo)
    hi = np.array(box.hi)
    margins = np.minimum(points - lo, hi - points)
    return np.maximum(margins.min(axis=1), 0.0)


def recover_controls(traj: SplineTrajectory, flow: FrozenFlow, n_samples: int,
                     speed_floor: float = 1e-9):
    """Thrust, yaw, pitch, and angle rates along the trajectory.

    The air-relative velocity a = dx/dt - u_flow(x) maps back through the
    kinematics: V = |a|, psi = atan2(a_y, a_x), theta = asin(a_z / V).
    Angles are unwrapped over the sample grid before differentiating.
    """
    s = np.linspace(0.0, 1.0, n_samples + 1)
    pos = traj.position(s)
    vel = traj.velocity(s)
    rel = vel - flow.sample(pos)
    speed = np.linalg.norm(rel, axis=1)
    safe = np.maximum(speed, speed_floor)
    psi = np.unwrap(np.arctan2(rel[:, 1], rel[:, 0]))
    theta = np.arcsin(np.clip(rel[:, 2] / safe, -1.0, 1.0))
    dt = traj.duration / n_samples
    psi_rate = np.gradient(psi, dt)
    theta_rate = np.gradient(theta, dt)
    # heading is undefined where the air-relative speed vanishes
    idle = speed < 10.0 * speed_floor
    psi_rate[idle] = 0.0
    theta_rate[idle] = 0.0
    return pos, speed, psi, theta, psi_rate, theta_rate, dt


def trajectory_cost(traj: SplineTrajectory, target, flow: FrozenFlow,
                    cfg: ZermeloConfig, obstacles: list[Box] | tuple = (),
                    domain: tuple | None = None) -> tuple[float, dict]:
    """Evaluate J and its term breakdown by trapezoidal quadrature."""
    m = cfg.quad_points
    pos, speed, _, _, psi_rate, theta_rate, dt = recover_controls(
        traj, flow, m, cfg.speed_floor)

    chi = np.stack([psi_rate, theta_rate, speed], axis=1)
    effort = 0.5 * np.einsum("mi,ij,mj->m", chi, cfg.control_weight, chi)

    n_obs = len(obstacles)
    phi = np.zeros(m + 1)
    collision = np.zeros(m + 1)
    if n_obs:
        alphas = _per_obstacle(cfg.alpha, n_obs)
        betas = _per_obstacle(cfg.beta, n_obs)
        for box, a, b in zip(obstacles, alphas, betas):
            phi += a * np.exp(-b * _box_distances(pos, box))
            collision += cfg.collision_weight * _box_penetration(pos, box) ** 2

    bound = cfg.bound_weight * np.maximum(speed - cfg.u_max, 0.0) ** 2
    outside = np.zeros(m + 1)
    if domain is not None:
        lo, hi = np.asarray(domain[0], dtype=float), np.asarray(domain[1], dtype=float)
        excess = np.maximum(np.maximum(lo - pos, pos - hi), 0.0)
        outside = cfg.domain_weight * np.sum(excess ** 2, axis=1)

    integrand = effort + phi + collision + bound + outside
    integral = float(np.trapezoid(integrand, dx=dt))
    terminal = cfg.kappa * float(np.sum((pos[-1] - np.asarray(target, dtype=float)) ** 2))
    breakdown = {
        "time": traj.duration,
        "control": float(np.trapezoid(effort, dx=dt)),
        "obstacle": float(np.trapezoid(phi, dx=dt)),
        "collision_penalty": float(np.trapezoid(collision, dx=dt)),
        "bound_penalty": float(np.trapezoid(bound, dx=dt)),
        "domain_penalty": float(np.trapezoid(outside, dx=dt)),
        "terminal": terminal,
    }
    j = traj.duration + integral + terminal
    breakdown["total"] = j
    return j, breakdown


@dataclass
class ZermeloResult:
    trajectory: SplineTrajectory
    cost: float
    breakdown: dict
    history: list
    converged: bool
    start: np.ndarray
    target: np.ndarray
    snapshot: int | None = None


def greville_abscissae(n: int, degree: int) -> np.ndarray:
    """Parameter positions where B-spline control points reproduce linears."""
    interior = np.linspace(0.0, 1.0, n - degree + 1)[1:-1]
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return np.array([knots[j + 1:j + degree + 1].mean() for j in range(n)])


def straight_line_trajectory(start, target, cfg: ZermeloConfig,
                             cruise_speed: float = 1.0) -> SplineTrajectory:
    """Uniform-speed straight line from start to target (linear in s exactly,
    thanks to Greville-abscissa control point placement)."""
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    xi = greville_abscissae(cfg.n_control_points, cfg.degree)
    pts = start[None, :] + xi[:, None] * (target - start)[None, :]
    dist = float(np.linalg.norm(target - start))
    duration = max(dist / cruise_speed, 1e-2)
    return SplineTrajectory(control_points=pts, duration=duration, degree=cfg.degree)


def optimize(start, target, flow: FrozenFlow, cfg: ZermeloConfig | None = None,
             obstacles: list[Box] | tuple = (), domain: tuple | None = None,
             snapshot: int | None = None) -> ZermeloResult:
    """Minimize the cost functional from a straight-line initialization.

    The first control point stays pinned to the start; the remaining points
    and the final time are free. Returns the best trajectory found, flagged
    as unconverged when the iteration budget runs out.
    """
    cfg = cfg or ZermeloConfig()
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    init = straight_line_trajectory(start, target, cfg)
    dist = float(np.linalg.norm(target - start))
    t_min = max(0.05, 0.5 * dist / cfg.u_max)

    n = cfg.n_control_points

    def unpack(z) -> SplineTrajectory:
        pts = np.empty((n, 3))
        pts[0] = start
        pts[1:] = z[:-1].reshape(n - 1, 3)
        return SplineTrajectory(control_points=pts, duration=float(z[-1]), degree=cfg.degree)

    def objective(z) -> float:
        j, _ = trajectory_cost(unpack(z), target, flow, cfg, obstacles, domain)
        return j

    z0 = np.concatenate([init.control_points[1:].ravel(), [init.duration]])
    history = [objective(z0)]
    bounds = [(None, None)] * (3 * (n - 1)) + [(t_min, None)]

    res = minimize(
        objective, z0, method="L-BFGS-B", bounds=bounds,
        callback=lambda zk: history.append(objective(zk)),
        options={"maxiter": cfg.max_iterations},
    )
    best_z = res.x if objective(res.x) <= history[0] else z0
    traj = unpack(best_z)
    cost, breakdown = trajectory_cost(traj, target, flow, cfg, obstacles, domain)
    return ZermeloResult(
        trajectory=traj, cost=cost, breakdown=breakdown, history=history,
        converged=bool(res.success), start=start, target=target, snapshot=snapshot,
    )


def plan_controls(traj: SplineTrajectory, flow: FrozenFlow, dt: float,
                  max_steps: int) -> tuple[list[ControlInput], float, float]:
    """Convert the open-loop plan into per-step controls for the environment.

    Controls are derived purely from the planned path and the frozen flow
    (no feedback): the step's mean velocity is mapped to thrust and heading
    through the kinematics, and angle changes are clamped to the action box.
    Returns the control list plus the initial yaw/pitch to start from.
    """
    n_steps = min(int(math.ceil(traj.duration / dt)), max_steps)
    controls = []
    t_grid = np.arange(n_steps + 1) * dt
    pos = traj.position_at_time(np.minimum(t_grid, traj.duration))
    flow_at = flow.sample(pos[:-1])
    psi_prev = None
    theta_prev = None
    psi0 = theta0 = 0.0
    for k in range(n_steps):
        vel = (pos[k + 1] - pos[k]) / dt
        rel = vel - flow_at[k]
        speed = float(np.linalg.norm(rel))
        if speed < 1e-12:
            thrust, psi_k, theta_k = 0.0, psi_prev or 0.0, theta_prev or 0.0
        else:
            thrust = min(speed, THRUST_MAX)
            psi_k = math.atan2(rel[1], rel[0])
            theta_k = math.asin(max(-1.0, min(1.0, rel[2] / speed)))
        if psi_prev is None:
            psi0, theta0 = psi_k, theta_k
            dpsi = 0.0
            dtheta = 0.0
        else:
            dpsi = max(-ANGLE_STEP_MAX, min(ANGLE_STEP_MAX, wrap_angle(psi_k - psi_prev)))
            dtheta = max(-ANGLE_STEP_MAX, min(ANGLE_STEP_MAX, wrap_angle(theta_k - theta_prev)))
        controls.append(ControlInput(thrust=thrust, dpsi=dpsi, dtheta=dtheta))
        psi_prev = (psi_k if psi_prev is None else wrap_angle(psi_prev + dpsi))
        theta_prev = (theta_k if theta_prev is None else wrap_angle(theta_prev + dtheta))
    return controls, psi0, theta0


def replay(result: ZermeloResult, env: NavigationEnv,
           flow: FrozenFlow | None = None,
           snapshot: int | None = None) -> EpisodeResult:
    """Execute the planned controls open-loop in the full environment.

    The environment runs the unsteady interpolated field; the plan never
    re-reads the environment state. After the planned horizon the vehicle
    coasts with zero thrust until the episode terminates.
    """
    snapshot = result.snapshot if snapshot is None else snapshot
    if snapshot is None:
        snapshot = 0
    if flow is None:
        flow = FrozenFlow.from_store(env.field.store, snapshot)
    controls, psi0, theta0 = plan_controls(
        result.trajectory, flow, env.integrator.dt, env.episode_cfg.max_steps)
    env.reset(start=result.start, target=result.target,
              orientation=(psi0, theta0), snapshot=snapshot)
    done = False
    i = 0
    while not done:
        action = controls[i] if i < len(controls) else ControlInput(0.0, 0.0, 0.0)
        _, _, done, _ = env.step(action)
        i += 1
    return env.result()
