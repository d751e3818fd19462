"""Scripted baseline policies for episodes and evaluation runs."""

from __future__ import annotations

import math

import numpy as np

from .dynamics import ANGLE_STEP_MAX, THRUST_MAX


class GreedyPolicy:
    """Steer straight at the target at full thrust."""

    def __call__(self, obs):
        dpsi = min(max(obs.psi_target, -ANGLE_STEP_MAX), ANGLE_STEP_MAX)
        dtheta = min(max(obs.theta_target, -ANGLE_STEP_MAX), ANGLE_STEP_MAX)
        # crawl while badly misaligned so the turn completes before closing in
        aligned = abs(obs.psi_target) < math.pi / 3 and abs(obs.theta_target) < math.pi / 3
        thrust = THRUST_MAX if aligned else 0.25
        return (thrust, dpsi, dtheta)


class RandomPolicy:
    """Uniform actions over the action box; reseedable per episode."""

    def __init__(self, seed: int | None = None):
        self._rng = np.random.default_rng(seed)

    def reset(self, seed: int | None = None):
        self._rng = np.random.default_rng(seed)

    def __call__(self, obs):
        return (
            self._rng.uniform(-THRUST_MAX, THRUST_MAX),
            self._rng.uniform(-ANGLE_STEP_MAX, ANGLE_STEP_MAX),
            self._rng.uniform(-ANGLE_STEP_MAX, ANGLE_STEP_MAX),
        )


class HoverPolicy:
    """Zero thrust, zero turn: drifts with the flow."""

    def __call__(self, obs):
        return (0.0, 0.0, 0.0)


def make_policy(name: str, seed: int | None = None):
    if name == "greedy":
        return GreedyPolicy()
    if name == "random":
        return RandomPolicy(seed)
    if name == "hover":
        return HoverPolicy()
    raise ValueError(f"unknown policy {name!r} (expected greedy, random, or hover)")
