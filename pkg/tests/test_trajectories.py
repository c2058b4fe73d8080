import numpy as np
import pytest

from fewview.geometry import Pose
from fewview.scene import preset_scene
from fewview.trajectories import (PRESET_KINDS, VIEWS_PER_VARIANT,
                                  dataset_preset, forward_circle_path, look_at,
                                  orbit_path, spiral_cylinder_path, spline_path,
                                  validate_path)

PRESET_COUNTS = {"mip360": 720, "re10k": 800, "llff": 960, "dtu": 480,
                 "co3d": 640, "single_forward": 80, "single_orbit": 80}


class TestLookAt:
    def test_forward_points_at_target(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pos, tgt = rng.uniform(-3, 3, 3), rng.uniform(-3, 3, 3)
            if np.linalg.norm(tgt - pos) < 1e-3:
                continue
            p = look_at(pos, tgt)
            f = (tgt - pos) / np.linalg.norm(tgt - pos)
            np.testing.assert_allclose(p.forward, f, atol=1e-12)
            np.testing.assert_allclose(p.translation, pos)

    def test_y_points_down(self):
        p = look_at(np.array([3.0, 0.0, 0.0]), np.zeros(3))
        assert p.rotation[1, 1] < 0  # camera y axis has negative world-y

    def test_rejects_coincident(self):
        with pytest.raises(ValueError):
            look_at(np.ones(3), np.ones(3))

    def test_vertical_fallback(self):
        p = look_at(np.array([0.0, 3.0, 0.0]), np.zeros(3))
        np.testing.assert_allclose(p.forward, [0, -1, 0], atol=1e-12)


class TestOrbit:
    def test_geometry(self):
        center = np.array([1.0, 0.0, 2.0])
        poses = orbit_path(center, 2.0, 0.5, 8)
        assert len(poses) == 8
        for p in poses:
            horiz = p.translation - center
            assert abs(horiz[1] - 0.5) < 1e-12
            np.testing.assert_allclose(np.hypot(horiz[0], horiz[2]), 2.0)
            # looks at the center
            to_c = center - p.translation
            np.testing.assert_allclose(p.forward, to_c / np.linalg.norm(to_c),
                                       atol=1e-12)

    def test_azimuth_convention(self):
        poses = orbit_path(np.zeros(3), 1.0, 0.0, 4)
        np.testing.assert_allclose(poses[0].translation, [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(poses[1].translation, [0, 0, 1], atol=1e-12)


class TestForwardCircle:
    def _fit(self):
        return [look_at(np.array([x, 0.0, -3.0]), np.array([x, 0.0, 0.0]))
                for x in (-0.5, 0.0, 0.5)]

    def test_radius_and_plane(self):
        fit = self._fit()
        poses = forward_circle_path(fit, scale=2.0, z_offset=0.0, n=16)
        centers = np.array([p.translation for p in fit])
        centroid = centers.mean(axis=0)
        expected_r = 2.0 * np.linalg.norm(centers - centroid, axis=1).mean()
        for p in poses:
            np.testing.assert_allclose(np.linalg.norm(p.translation - centroid),
                                       expected_r, atol=1e-9)
            # in-plane: displacement orthogonal to the mean forward (+z here)
            assert abs((p.translation - centroid)[2]) < 1e-9
            np.testing.assert_allclose(p.forward, [0, 0, 1], atol=1e-9)

    def test_z_offset_shifts_along_forward(self):
        fit = self._fit()
        a = forward_circle_path(fit, 1.0, 0.0, 8)
        b = forward_circle_path(fit, 1.0, 0.7, 8)
        for pa, pb in zip(a, b):
            np.testing.assert_allclose(pb.translation - pa.translation,
                                       [0, 0, 0.7], atol=1e-9)


class TestSpline:
    def test_interpolates_endpoints(self):
        control = [look_at(np.array([0.0, 0.0, -3.0]), np.zeros(3)),
                   look_at(np.array([1.0, 0.5, -3.0]), np.zeros(3)),
                   look_at(np.array([2.0, 0.0, -3.0]), np.zeros(3))]
        poses = spline_path(control, (0.0, 0.0), 21)
        np.testing.assert_allclose(poses[0].translation, control[0].translation,
                                   atol=1e-9)
        np.testing.assert_allclose(poses[-1].translation, control[-1].translation,
                                   atol=1e-9)
        np.testing.assert_allclose(poses[0].rotation, control[0].rotation, atol=1e-9)
        # midpoint passes through the middle control point
        np.testing.assert_allclose(poses[10].translation, control[1].translation,
                                   atol=1e-9)

    def test_lateral_offset(self):
        control = [look_at(np.array([0.0, 0.0, -3.0]), np.zeros(3)),
                   look_at(np.array([1.0, 0.0, -3.0]), np.zeros(3))]
        base = spline_path(control, (0.0, 0.0), 5)
        off = spline_path(control, (0.3, -0.2), 5)
        shift = 0.3 * control[0].rotation[:, 0] - 0.2 * control[0].rotation[:, 2]
        for pb, po in zip(base, off):
            np.testing.assert_allclose(po.translation - pb.translation, shift,
                                       atol=1e-12)

    def test_orientations_valid_rotations(self):
        control = [look_at(np.array([2.0, 0.0, 0.0]), np.zeros(3)),
                   look_at(np.array([0.0, 0.0, 2.0]), np.zeros(3))]
        for p in spline_path(control, (0.0, 0.0), 9):
            np.testing.assert_allclose(p.rotation.T @ p.rotation, np.eye(3),
                                       atol=1e-9)


class TestSpiral:
    def test_height_span_and_radius(self):
        poses = spiral_cylinder_path(1.5, -0.4, 0.4, 2.0, np.zeros(3), 9)
        hs = [p.translation[1] for p in poses]
        assert hs[0] == pytest.approx(-0.4) and hs[-1] == pytest.approx(0.4)
        for p in poses:
            np.testing.assert_allclose(np.hypot(p.translation[0], p.translation[2]),
                                       1.5)
            # looks horizontally at the axis
            assert abs(p.forward[1]) < 1e-12

    def test_round_trip_returns(self):
        poses = spiral_cylinder_path(1.0, 0.0, 1.0, 1.0, np.zeros(3), 9,
                                     round_trip=True)
        hs = [p.translation[1] for p in poses]
        assert hs[0] == pytest.approx(0.0)
        assert hs[4] == pytest.approx(1.0)
        assert hs[-1] == pytest.approx(0.0)


class TestDatasetPresets:
    @pytest.mark.parametrize("kind", PRESET_KINDS)
    def test_counts(self, kind):
        n_in = 1 if kind.startswith("single") else 3
        inputs = [look_at(np.array([3.0 * np.cos(a), 0.4, 3.0 * np.sin(a)]),
                          np.zeros(3))
                  for a in np.linspace(0, 0.8, n_in)]
        poses = dataset_preset(kind, inputs)
        assert len(poses) == PRESET_COUNTS[kind]
        assert len(poses) % VIEWS_PER_VARIANT == 0

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="mip360"):
            dataset_preset("imagenet", [Pose.identity()])

    def test_needs_input(self):
        with pytest.raises(ValueError):
            dataset_preset("mip360", [])


class TestValidatePath:
    def test_flags_interior_poses(self):
        scene = preset_scene("single_sphere")
        poses = [look_at(np.array([3.0, 0.0, 0.0]), np.zeros(3)),
                 look_at(np.array([0.5, 0.0, 0.0]), np.array([1.0, 0.0, 0.0])),
                 look_at(np.array([0.0, 2.0, 0.0]), np.zeros(3))]
        assert validate_path(poses, scene) == [1]

    def test_clean_path_passes(self):
        scene = preset_scene("cluster", 0)
        assert validate_path(orbit_path(np.zeros(3), 3.0, 0.5, 20), scene) == []
