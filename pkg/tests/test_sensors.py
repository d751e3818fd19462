import math

import numpy as np
import pytest

from flownav.geometry import Box
from flownav.sensors import FORWARD_RAY, N_RAYS, RayFan, scan


@pytest.fixture(scope="module")
def fan():
    return RayFan(max_range=2.0)


def obstacle_one():
    return Box(lo=(-0.25, 0.0, -0.25), hi=(0.25, 1.0, 0.25))


class TestFanGeometry:
    def test_counts_and_unit_norm(self, fan):
        assert fan.body_dirs.shape == (45, 3)
        assert fan.elevations.size == 9 and fan.azimuths.size == 5
        np.testing.assert_allclose(np.linalg.norm(fan.body_dirs, axis=1), 1.0,
                                   atol=1e-12)

    def test_angle_spans(self, fan):
        assert fan.elevations[0] == -math.pi and fan.elevations[-1] == math.pi
        assert fan.azimuths[0] == -math.pi and fan.azimuths[-1] == math.pi

    def test_forward_ray_is_center(self, fan):
        np.testing.assert_allclose(fan.body_dirs[FORWARD_RAY], [1.0, 0.0, 0.0],
                                   atol=1e-15)
        assert fan.offsets[FORWARD_RAY].tolist() == [0.0, 0.0]


class TestScan:
    def test_empty_scene_all_max_range(self, fan):
        r = scan((0.0, 5.0, 0.0), 0.3, -0.2, [], fan)
        np.testing.assert_array_equal(r.distances, 2.0)
        assert r.forward_free
        assert r.best_direction is None

    def test_forward_distance_to_paper_obstacle(self, fan):
        # heading +x from (-1, 0.5, 0): obstacle face at x=-0.25 -> 0.75
        r = scan((-1.0, 0.5, 0.0), 0.0, 0.0, [obstacle_one()], fan)
        assert r.distances[FORWARD_RAY] == pytest.approx(0.75, abs=1e-12)
        assert not r.forward_free
        assert r.best_direction is not None

    def test_ground_plane_is_ray_obstacle(self, fan):
        # with psi=0, theta=0 the azimuth -pi/2 ray points along -y
        r = scan((0.0, 0.5, 0.0), 0.0, 0.0, [], fan)
        down = 4 * 5 + 1
        np.testing.assert_allclose(r.distances[down], 0.5, atol=1e-12)

    def test_z_mirror_symmetry(self, fan):
        box = Box(lo=(0.5, 0.0, 0.1), hi=(1.5, 2.0, 0.9))
        mirrored = Box(lo=(0.5, 0.0, -0.9), hi=(1.5, 2.0, -0.1))
        psi, theta = 0.4, 0.3
        a = scan((0.0, 1.0, 0.2), psi, theta, [box], fan)
        b = scan((0.0, 1.0, -0.2), psi, -theta, [mirrored], fan)
        for i in range(9):
            for j in range(5):
                assert a.distances[i * 5 + j] == pytest.approx(
                    b.distances[(8 - i) * 5 + j], abs=1e-10)

    def test_yaw_pi_flips_forward_in_yaw_plane(self, fan):
        from flownav.geometry import rotation_matrix
        psi, theta = 0.7, 0.2
        f1 = rotation_matrix(psi, theta) @ fan.body_dirs[FORWARD_RAY]
        f2 = rotation_matrix(psi + math.pi, theta) @ fan.body_dirs[FORWARD_RAY]
        np.testing.assert_allclose(f2[:2], -f1[:2], atol=1e-12)
        np.testing.assert_allclose(f2[2], f1[2], atol=1e-12)

    def test_best_direction_tiebreak(self, fan):
        # wall ahead blocks forward and the +-pi/4 elevation rays; the
        # max-clearance tie resolves to the smallest |dphi| + |dtheta|,
        # then the smallest ray index
        wall = Box(lo=(1.0, 0.0, -10.0), hi=(1.5, 10.0, 10.0))
        r = scan((0.0, 5.0, 0.0), 0.0, 0.0, [wall], fan)
        assert not r.forward_free
        assert r.distances[FORWARD_RAY] == pytest.approx(1.0, abs=1e-12)
        dphi, dtheta = r.best_direction
        assert abs(dphi) + abs(dtheta) == pytest.approx(math.pi / 2)
        assert (dphi, dtheta) == (0.0, -math.pi / 2)

    def test_best_direction_none_when_free(self, fan):
        r = scan((-1.9, 2.5, 0.0), math.pi, 0.0, [obstacle_one()], fan)
        if r.forward_free:
            assert r.best_direction is None
        else:
            assert r.best_direction is not None

    def test_distances_bounded(self, fan):
        rng = np.random.default_rng(4)
        boxes = [obstacle_one(), Box(lo=(1.25, 0.0, -0.25), hi=(1.75, 0.5, 0.25))]
        for _ in range(50):
            p = rng.uniform((-2, 0.01, -1), (5, 3, 1))
            r = scan(p, rng.uniform(-3, 3), rng.uniform(-1.5, 1.5), boxes, fan)
            assert r.distances.shape == (N_RAYS,)
            assert np.all(r.distances >= 0.0) and np.all(r.distances <= 2.0)
            assert np.isfinite(r.distances).all()
