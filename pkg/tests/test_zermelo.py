import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from flownav.env import EpisodeConfig, NavigationEnv, EVENT_TARGET
from flownav.geometry import Box
from flownav.interp import FlowField
from flownav.zermelo import (
    FrozenFlow,
    SplineTrajectory,
    ZermeloConfig,
    greville_abscissae,
    optimize,
    plan_controls,
    replay,
    straight_line_trajectory,
    trajectory_cost,
)


@pytest.fixture(scope="module")
def still_flow(still_air_store):
    return FrozenFlow.from_store(still_air_store, 0)


@pytest.fixture(scope="module")
def still_domain(still_air_store):
    m = still_air_store.mesh
    return (m.domain_min, m.domain_max)


class TestSpline:
    def test_clamped_ends_interpolate(self):
        pts = np.array([[0, 0, 0], [1, 0, 1], [2, 1, 0], [3, 1, 1], [4, 0, 0]])
        traj = SplineTrajectory(control_points=pts, duration=2.0)
        np.testing.assert_allclose(traj.position(0.0), pts[0], atol=1e-14)
        np.testing.assert_allclose(traj.position(1.0), pts[-1], atol=1e-14)

    def test_straight_line_is_linear_and_uniform_speed(self):
        cfg = ZermeloConfig()
        start = np.array([0.0, 0.0, 0.0])
        target = np.array([3.0, 4.0, 0.0])
        traj = straight_line_trajectory(start, target, cfg, cruise_speed=1.0)
        s = np.linspace(0, 1, 57)
        want = start + s[:, None] * (target - start)
        np.testing.assert_allclose(traj.position(s), want, atol=1e-12)
        speeds = np.linalg.norm(traj.velocity(s), axis=1)
        np.testing.assert_allclose(speeds, 1.0, atol=1e-10)

    def test_too_few_control_points_rejected(self):
        with pytest.raises(Exception):
            SplineTrajectory(control_points=np.zeros((3, 3)), duration=1.0)

    def test_greville_reproduces_identity(self):
        xi = greville_abscissae(12, 3)
        assert xi[0] == 0.0 and xi[-1] == 1.0
        assert np.all(np.diff(xi) > 0)


class TestCost:
    def test_terminal_zero_when_ending_on_target(self, still_flow, still_domain):
        cfg = ZermeloConfig()
        start = np.array([-1.0, 1.5, 0.0])
        target = np.array([3.0, 1.5, 0.0])
        traj = straight_line_trajectory(start, target, cfg)
        _, breakdown = trajectory_cost(traj, target, still_flow, cfg, (),
                                       still_domain)
        assert breakdown["terminal"] == pytest.approx(0.0, abs=1e-20)

    def test_obstacle_penalty_alpha_on_surface(self, still_flow, still_domain):
        cfg = ZermeloConfig(alpha=5.0, beta=8.0)
        box = Box(lo=(-0.25, 0.0, -0.25), hi=(0.25, 1.0, 0.25))
        # park the path on the obstacle surface: d = 0 so phi = alpha
        p = np.array([0.25, 0.5, 0.0])
        pts = np.tile(p, (cfg.n_control_points, 1))
        traj = SplineTrajectory(control_points=pts, duration=2.0)
        _, breakdown = trajectory_cost(traj, p, still_flow, cfg, (box,),
                                       still_domain)
        assert breakdown["obstacle"] == pytest.approx(cfg.alpha * traj.duration,
                                                      rel=1e-12)

    def test_straight_line_control_effort(self, still_flow, still_domain):
        # speed 1 through zero flow with R = I: integrand 0.5 |chi|^2 = 0.5
        cfg = ZermeloConfig(control_weight=np.eye(3))
        start = np.array([-1.0, 1.5, 0.0])
        target = np.array([2.0, 1.5, 0.0])
        traj = straight_line_trajectory(start, target, cfg, cruise_speed=1.0)
        _, breakdown = trajectory_cost(traj, target, still_flow, cfg, (),
                                       still_domain)
        assert breakdown["control"] == pytest.approx(0.5 * traj.duration, rel=1e-6)

    def test_quadrature_stabilizes_under_refinement(self, still_flow, still_domain):
        start = np.array([-1.0, 1.0, -0.3])
        target = np.array([3.5, 2.0, 0.4])
        base = ZermeloConfig(quad_points=100)
        traj = straight_line_trajectory(start, target, base)
        traj.control_points[5] += np.array([0.0, 0.4, -0.2])  # bend it
        j_prev, _ = trajectory_cost(traj, target, still_flow, base, (), still_domain)
        for m in (200, 400):
            cfg = ZermeloConfig(quad_points=m)
            j, _ = trajectory_cost(traj, target, still_flow, cfg, (), still_domain)
            assert abs(j - j_prev) / abs(j_prev) < 1e-3
            j_prev = j


class TestOptimize:
    def test_zero_flow_no_obstacles_straight_optimum(self, still_flow, still_domain):
        start = np.array([-1.2, 1.5, -0.2])
        target = np.array([3.4, 1.9, 0.3])
        t0 = time.time()
        res = optimize(start, target, still_flow, ZermeloConfig(), (), still_domain)
        elapsed = time.time() - t0
        dist = np.linalg.norm(target - start)
        length = res.trajectory.path_length()
        assert length <= dist * 1.01
        miss = np.linalg.norm(res.trajectory.position(1.0) - target)
        assert miss < 0.25
        assert elapsed < 60.0
        # optimizer sanity: accepted costs never increase
        assert res.cost <= res.history[0] + 1e-12
        assert all(a >= b - 1e-9 for a, b in zip(res.history, res.history[1:]))

    def test_uniform_cross_flow_matches_analytic_heading(self, tmp_path):
        # constant side flow (0, w, 0); the optimum over constant-heading
        # trajectories is the classical Zermelo crab angle
        w = 0.5
        from conftest import build_dataset

        def side(x, y, z, t):
            return np.zeros_like(x), np.full_like(x, w), np.zeros_like(x)

        store = build_dataset(tmp_path, side, grid=(29, 25, 17),
                              times=(0.0,), block_size=(10, 10, 10),
                              block_stride=(8, 8, 8),
                              domain=((-2.0, 0.0, -1.0), (5.0, 3.0, 1.0)))
        flow = FrozenFlow.from_store(store, 0)
        start = np.array([-1.5, 1.5, 0.0])
        target = np.array([4.0, 1.5, 0.0])
        span = target[0] - start[0]
        cfg = ZermeloConfig()

        # analytic constant-control oracle: T = span / (V cos psi),
        # sin psi = -w / V, J(V) = T * (1 + 0.5 * R * |chi|^2)
        r_diag = cfg.control_weight[2, 2]

        def j_const(v):
            if v <= w + 1e-6:
                return 1e9
            t_f = span / math.sqrt(v * v - w * w)
            return t_f * (1.0 + 0.5 * r_diag * v * v)

        sol = minimize_scalar(j_const, bounds=(w + 1e-3, cfg.u_max),
                              method="bounded")
        psi_analytic = -math.asin(w / sol.x)

        res = optimize(start, target, flow, cfg, (),
                       (store.mesh.domain_min, store.mesh.domain_max))
        from flownav.zermelo import recover_controls
        _, speed, psi, _, _, _, _ = recover_controls(res.trajectory, flow, 200)
        interior = slice(20, -20)
        psi_opt = float(np.mean(psi[interior]))
        assert abs(psi_opt - psi_analytic) < math.radians(2.0), (
            psi_opt, psi_analytic)
        assert float(np.std(psi[interior])) < math.radians(2.0)

    def test_obstacle_on_path_cleared(self, still_air_store, still_flow, still_domain):
        obstacles = still_air_store.mesh.obstacles
        start = np.array([-1.0, 0.5, 0.0])
        target = np.array([3.0, 0.5, 0.0])
        cfg = ZermeloConfig()
        res = optimize(start, target, still_flow, cfg, obstacles, still_domain)
        straight = straight_line_trajectory(start, target, cfg)
        j_straight, _ = trajectory_cost(straight, target, still_flow, cfg,
                                        obstacles, still_domain)
        pos = res.trajectory.position(np.linspace(0, 1, 400))
        clearance = min(
            min(box.surface_distance(p) for p in pos) for box in obstacles)
        assert clearance > 0.0
        assert res.cost < j_straight

    def test_penalty_monotonicity(self, still_air_store, still_flow, still_domain):
        obstacles = still_air_store.mesh.obstacles
        start = np.array([-1.0, 0.5, 0.0])
        target = np.array([3.0, 0.5, 0.0])
        clearances = []
        for alpha in (1.0, 5.0, 25.0):
            cfg = ZermeloConfig(alpha=alpha)
            res = optimize(start, target, still_flow, cfg, obstacles, still_domain)
            pos = res.trajectory.position(np.linspace(0, 1, 400))
            clearances.append(min(
                min(box.surface_distance(p) for p in pos) for box in obstacles))
        assert clearances[0] <= clearances[1] + 1e-3
        assert clearances[1] <= clearances[2] + 1e-3


class TestReplay:
    def test_zero_flow_replay_tracks_plan(self, still_air_store, still_flow,
                                          still_domain):
        start = np.array([-1.5, 1.5, 0.5])
        target = np.array([3.0, 2.0, -0.3])
        res = optimize(start, target, still_flow, ZermeloConfig(), (), still_domain)
        env = NavigationEnv(FlowField(still_air_store))
        controls, psi0, theta0 = plan_controls(
            res.trajectory, still_flow, env.integrator.dt,
            env.episode_cfg.max_steps)
        env.reset(start=start, target=target, orientation=(psi0, theta0),
                  snapshot=0)
        worst = 0.0
        for k, c in enumerate(controls):
            env.step(c)
            t_k = min((k + 1) * env.integrator.dt, res.trajectory.duration)
            planned = res.trajectory.position_at_time(t_k)
            worst = max(worst, float(np.linalg.norm(env.state.position - planned)))
            if env.done:
                break
        assert worst < 1e-3

    def test_frozen_field_replay_reaches_target(self, still_air_store, still_flow,
                                                still_domain):
        start = np.array([-1.0, 1.8, 0.2])
        target = np.array([3.0, 1.5, -0.2])
        res = optimize(start, target, still_flow, ZermeloConfig(),
                       still_air_store.mesh.obstacles, still_domain, snapshot=0)
        env = NavigationEnv(FlowField(still_air_store))
        episode = replay(res, env, still_flow)
        assert episode.outcome == EVENT_TARGET
