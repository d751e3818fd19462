"""UAV point-mass kinematics advanced with sub-stepped RK4.

State is position plus yaw/pitch; ground velocity is thrust along the heading
plus the local flow:

    u_g = V cos(theta) cos(psi) + u_f
    v_g = V cos(theta) sin(psi) + v_f
    w_g = V sin(theta)          + w_f

Yaw and pitch change at the constant rates dpsi/dt and dtheta/dt across one
environment step, so the angles ramp linearly over the RK4 substeps. The flow
is sampled at every stage position and time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import wrap_angle

logger = logging.getLogger(__name__)

THRUST_MAX = 2.0
ANGLE_STEP_MAX = math.pi / 4


@dataclass
class UavState:
    x: float
    y: float
    z: float
    u_g: float
    v_g: float
    w_g: float
    psi: float
    theta: float
    t: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def ground_velocity(self) -> np.ndarray:
        return np.array([self.u_g, self.v_g, self.w_g])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.u_g, self.v_g, self.w_g,
                         self.psi, self.theta])


@dataclass(frozen=True)
class ControlInput:
    thrust: float
    dpsi: float
    dtheta: float

    def clamped(self) -> "ControlInput":
        return ControlInput(
            thrust=min(max(self.thrust, -THRUST_MAX), THRUST_MAX),
            dpsi=min(max(self.dpsi, -ANGLE_STEP_MAX), ANGLE_STEP_MAX),
            dtheta=min(max(self.dtheta, -ANGLE_STEP_MAX), ANGLE_STEP_MAX),
        )

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.thrust, self.dpsi, self.dtheta)


@dataclass
class IntegratorConfig:
    dt: float = 0.08750
    substeps: int = 40
    cfl_fraction: float = 0.5
    cfl_extent: float | None = None  # reference block extent, if known

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass
class StepDiagnostics:
    positions: np.ndarray  # substep end positions, (n+1, 3)
    fault: bool = False
    max_substep_displacement: float = 0.0
    cfl_violations: int = 0


def derivative(state: UavState, control: ControlInput, flow_lookup,
               dt: float = 0.08750) -> np.ndarray:
    """Instantaneous state rate [dx, dy, dz, dpsi/dt, dtheta/dt].

    The positional rate is the ground velocity at the state's position, time,
    and angles; the angular rates are the per-step changes divided by the
    step duration and stay constant across the step.
    """
    c = control.clamped()
    flow = flow_lookup(state.position, state.t)
    ct = math.cos(state.theta)
    return np.array([
        c.thrust * ct * math.cos(state.psi) + flow[0],
        c.thrust * ct * math.sin(state.psi) + flow[1],
        c.thrust * math.sin(state.theta) + flow[2],
        c.dpsi / dt,
        c.dtheta / dt,
    ])


def rk4_step(state: UavState, control: ControlInput, flow_lookup,
             config: IntegratorConfig) -> tuple[UavState, StepDiagnostics]:
    """Advance one environment step of duration dt with classical RK4 substeps.

    Returns the new state (angles wrapped, ground velocity set to end-of-step
    values) and diagnostics with the substep positions. A non-finite
    intermediate state aborts the step and sets the fault flag.
    """
    c = control.clamped()
    h = config.dt / config.substeps
    psi_rate = c.dpsi / config.dt
    theta_rate = c.dtheta / config.dt
    t0 = state.t
    psi0 = state.psi
    theta0 = state.theta
    thrust = c.thrust

    def f(pos, tau):
        psi = psi0 + psi_rate * (tau - t0)
        theta = theta0 + theta_rate * (tau - t0)
        w = flow_lookup(pos, tau)
        ct = math.cos(theta)
        return np.array([
            thrust * ct * math.cos(psi) + w[0],
            thrust * ct * math.sin(psi) + w[1],
            thrust * math.sin(theta) + w[2],
        ])

    pos = state.position
    positions = np.empty((config.substeps + 1, 3))
    positions[0] = pos
    diag = StepDiagnostics(positions=positions)

    cfl_limit = None
    if config.cfl_extent is not None:
        cfl_limit = config.cfl_fraction * config.cfl_extent

    for i in range(config.substeps):
        tau = t0 + i * h
        k1 = f(pos, tau)
        k2 = f(pos + 0.5 * h * k1, tau + 0.5 * h)
        k3 = f(pos + 0.5 * h * k2, tau + 0.5 * h)
        k4 = f(pos + h * k3, tau + h)
        delta = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(delta).all():
            diag.fault = True
            diag.positions = positions[:i + 1]
            tau_abort = t0 + i * h
            frac = (tau_abort - t0) / config.dt
            aborted = replace(
                state,
                x=pos[0], y=pos[1], z=pos[2],
                psi=wrap_angle(psi0 + c.dpsi * frac),
                theta=wrap_angle(theta0 + c.dtheta * frac),
                t=tau_abort,
            )
            logger.error("rk4_step aborted at substep %d: non-finite rate", i)
            return aborted, diag
        disp = float(np.linalg.norm(delta))
        if disp > diag.max_substep_displacement:
            diag.max_substep_displacement = disp
        if cfl_limit is not None and disp > cfl_limit:
            diag.cfl_violations += 1
        pos = pos + delta
        positions[i + 1] = pos

    if diag.cfl_violations:
        logger.warning(
            "pseudo-CFL guard: %d substep(s) moved more than %.3g "
            "(fraction %.2f of a block extent)",
            diag.cfl_violations, cfl_limit, config.cfl_fraction,
        )

    t1 = t0 + config.dt
    psi1 = wrap_angle(psi0 + c.dpsi)
    theta1 = wrap_angle(theta0 + c.dtheta)
    flow_end = flow_lookup(pos, t1)
    ct = math.cos(theta1)
    new_state = UavState(
        x=pos[0], y=pos[1], z=pos[2],
        u_g=thrust * ct * math.cos(psi1) + flow_end[0],
        v_g=thrust * ct * math.sin(psi1) + flow_end[1],
        w_g=thrust * math.sin(theta1) + flow_end[2],
        psi=psi1, theta=theta1, t=t1,
    )
    return new_state, diag
