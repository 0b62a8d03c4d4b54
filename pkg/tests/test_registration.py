from __future__ import annotations

import numpy as np
import pytest

from semmap.errors import ValidationFailure
from semmap.geometry import PointCloud
from semmap.registration import (
    RegistrationConfig,
    RegistrationResult,
    estimate_normals,
    match_scans,
    planar_params,
    planar_transform,
    register,
)
from semmap.transforms import RigidTransform3


def three_plane_cloud(step: float = 0.05, extent: float = 2.0) -> PointCloud:
    """Three mutually orthogonal planes meeting near the origin corner."""
    s = np.arange(0.05, extent, step)
    g1, g2 = np.meshgrid(s, s)
    flat1, flat2 = g1.ravel(), g2.ravel()
    floor = np.column_stack([flat1, flat2, np.zeros_like(flat1)])
    wall_x = np.column_stack([np.zeros_like(flat1), flat1, flat2])
    wall_y = np.column_stack([flat1, np.zeros_like(flat1), flat2])
    return PointCloud(np.vstack([floor, wall_x, wall_y]))


def small_se3(rng, max_angle_deg=10.0, max_trans=0.2) -> RigidTransform3:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.3, 1.0) * np.deg2rad(max_angle_deg)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    trans = rng.uniform(0.3, 1.0) * max_trans * direction
    return RigidTransform3.from_rotvec(axis * angle, trans)


class TestEstimateNormals:
    def test_plane_normals_vertical(self, rng):
        pts = np.column_stack([rng.uniform(0, 1, 200), rng.uniform(0, 1, 200), np.zeros(200)])
        cloud = estimate_normals(PointCloud(pts), k=10, viewpoint=(0.5, 0.5, 1.0))
        assert np.allclose(cloud.normals, [0.0, 0.0, 1.0], atol=1e-6)

    def test_collinear_neighborhood_invalid(self):
        pts = np.column_stack([np.linspace(0, 1, 30), np.zeros(30), np.zeros(30)])
        cloud = estimate_normals(PointCloud(pts), k=5)
        assert np.all(np.linalg.norm(cloud.normals, axis=1) < 1e-9)

    def test_sphere_normals_radial(self, rng):
        directions = rng.normal(size=(2000, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        pts = directions * 1.0 + rng.normal(scale=0.002, size=(2000, 3))
        cloud = estimate_normals(PointCloud(pts), k=12, viewpoint=(0.0, 0.0, 0.0))
        # oriented toward origin, so normals point inward: compare to -radial
        cosines = -np.einsum("ni,ni->n", cloud.normals, directions)
        angles = np.degrees(np.arccos(np.clip(cosines, -1, 1)))
        assert np.percentile(angles, 95) < 5.0

    def test_requires_enough_points(self):
        with pytest.raises(ValidationFailure):
            estimate_normals(PointCloud(np.zeros((3, 3))), k=10)


class TestRegister:
    def test_identical_clouds_identity(self):
        cloud = three_plane_cloud()
        result = register(cloud, cloud)
        assert result.converged
        assert result.transform.rotation_angle() < 1e-6
        assert np.linalg.norm(result.transform.t) < 1e-6

    def test_recovers_known_transform(self, rng):
        target = three_plane_cloud()
        for _ in range(5):
            true = small_se3(rng)
            source = target.transformed(true.inverse())
            result = register(source, target)
            assert result.converged, result.message
            err = result.transform.compose(true.inverse())
            assert err.rotation_angle() < 1e-3
            assert np.linalg.norm(err.t) < 1e-3

    def test_disjoint_clouds_fail_gracefully(self, rng):
        a = PointCloud(rng.normal(size=(100, 3)))
        b = PointCloud(rng.normal(size=(100, 3)) + 100.0)
        result = register(a, b)
        assert not result.converged
        assert result.inlier_fraction < RegistrationConfig().min_inlier_fraction

    def test_single_plane_flagged_unobservable(self, rng):
        pts = np.column_stack([rng.uniform(0, 2, 800), rng.uniform(0, 2, 800), np.zeros(800)])
        cloud = PointCloud(pts)
        result = register(cloud, cloud)
        assert not result.converged
        assert "unobservable" in result.message

    def test_residual_history_non_increasing(self, rng):
        target = three_plane_cloud()
        source = target.transformed(small_se3(rng).inverse())
        result = register(source, target)
        history = np.array(result.residual_history)
        assert np.all(np.diff(history) <= 1e-15)

    def test_result_transform_always_unit_quaternion(self, rng):
        a = PointCloud(rng.normal(size=(100, 3)))
        b = PointCloud(rng.normal(size=(100, 3)) + 50.0)
        result = register(a, b)
        assert abs(np.linalg.norm(result.transform.q) - 1.0) < 1e-12

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValidationFailure):
            register(PointCloud(), three_plane_cloud())


def l_shaped_scan(n: int = 300) -> np.ndarray:
    s = np.linspace(0.0, 2.0, n // 2)
    wall_a = np.column_stack([s, np.full_like(s, 1.0)])
    wall_b = np.column_stack([np.full_like(s, 2.0), 1.0 - s])
    return np.vstack([wall_a, wall_b])


class TestMatchScans:
    def test_identical_scans_identity(self):
        scan = l_shaped_scan()
        result = match_scans(scan, scan)
        assert result.converged
        params = planar_params(result.transform)
        assert np.allclose(params, 0.0, atol=1e-6)

    def test_recovers_rotation_and_shift(self):
        target = l_shaped_scan()
        true = planar_transform(0.1, -0.05, np.deg2rad(5.0))
        inv = true.inverse()
        source = (target @ inv.rotation_matrix[:2, :2].T) + inv.t[:2]
        result = match_scans(source, target)
        assert result.converged, result.message
        err = result.transform.compose(true.inverse())
        assert err.rotation_angle() < 1e-3
        assert np.linalg.norm(err.t) < 1e-3

    def test_single_wall_unobservable(self):
        s = np.linspace(0.0, 2.0, 200)
        wall = np.column_stack([s, np.ones_like(s)])
        result = match_scans(wall, wall)
        assert (not result.converged) and "unobservable" in result.message

    def test_planar_transform_roundtrip(self):
        t = planar_transform(0.4, -1.2, 0.7)
        assert np.allclose(planar_params(t), [0.4, -1.2, 0.7])
