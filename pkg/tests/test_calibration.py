from __future__ import annotations

import numpy as np
import pytest

from semmap.calibration import (
    DepthDistortionModel,
    assemble_tree,
    calibrate_sensor_base,
    calibrate_sensor_sensor,
    fit_depth_model,
    undistort,
)
from semmap.errors import NumericalError, ValidationFailure
from semmap.geometry import GeometricElement, PointCloud
from semmap.io.calib import (
    read_distortion_model,
    read_tree,
    write_distortion_model,
    write_tree,
)
from semmap.projection import DepthImage, PinholeIntrinsics, render_depth
from semmap.transforms import RigidTransform3

from conftest import random_transform
from test_registration import three_plane_cloud

K = PinholeIntrinsics(fx=80.0, fy=80.0, cx=39.5, cy=29.5, width=80, height=60, near=0.2, far=10.0)


def wall_image(z: float, k: PinholeIntrinsics = K) -> DepthImage:
    """Ideal fronto-parallel wall at depth z."""
    return DepthImage(k.width, k.height, np.full((k.height, k.width), z))


def wall_plane(z: float) -> GeometricElement:
    return GeometricElement.make_plane("wall", [0.0, 0.0, 1.0], z)


def radial_distort(img: DepthImage, k: PinholeIntrinsics, amount: float = 0.05) -> DepthImage:
    """Synthetic bowl distortion: depth * (1 + amount * r^2), r normalized."""
    vs, us = np.mgrid[0:k.height, 0:k.width].astype(float)
    r2 = ((us - k.cx) / k.width) ** 2 + ((vs - k.cy) / k.height) ** 2
    return DepthImage(img.width, img.height, img.depth * (1 + amount * r2 * 4.0))


def plane_fit_rms(img: DepthImage, k: PinholeIntrinsics) -> float:
    """RMS residual of a least-squares plane through the unprojected pixels."""
    from semmap.projection import unproject

    cloud = unproject(img, k)
    pts = cloud.points
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    return float(np.sqrt(np.mean((centered @ normal) ** 2)))


class TestDepthModel:
    def test_identity_model_is_noop(self):
        model = DepthDistortionModel(width=K.width, height=K.height)
        img = wall_image(2.0)
        out = undistort(img, model)
        assert np.array_equal(out.depth, img.depth)

    def test_uniform_multiplier_scales_depth(self):
        grid = np.full((5, 6, 8), 1.1)
        model = DepthDistortionModel(width=K.width, height=K.height, multipliers=grid)
        img = wall_image(2.0)
        img = DepthImage(K.width, K.height, np.where(np.arange(K.width) % 7 == 0, 0.0, img.depth))
        out = undistort(img, model)
        nz = img.depth > 0
        assert np.allclose(out.depth[nz], img.depth[nz] * 1.1)
        assert np.all(out.depth[~nz] == 0.0)

    def test_fit_on_undistorted_walls_is_identity(self):
        observations = [(wall_image(z), wall_plane(z)) for z in (0.5, 1.5, 2.5, 3.5, 4.5)]
        model = fit_depth_model(observations, K)
        assert np.allclose(model.multipliers, 1.0, atol=1e-6)

    def test_empty_observations_identity_model(self):
        model = fit_depth_model([], K)
        assert model.is_identity()

    def test_small_observations_skipped(self):
        depth = np.zeros((K.height, K.width))
        depth[0, :50] = 2.0  # only 50 valid pixels
        model = fit_depth_model([(DepthImage(K.width, K.height, depth), wall_plane(2.0))], K)
        assert model.is_identity()

    def test_fit_then_undistort_recovers_planarity(self):
        distorted = [
            (radial_distort(wall_image(z), K), wall_plane(z))
            for z in (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5)
        ]
        model = fit_depth_model(distorted, K, grid_w=20, grid_h=15)
        raw = radial_distort(wall_image(2.0), K)
        rms_before = plane_fit_rms(raw, K)
        rms_after = plane_fit_rms(undistort(raw, model), K)
        assert rms_after < 0.1 * rms_before


def conjugate_motions(t_true: RigidTransform3, rng, n: int = 2,
                      noise: float = 0.0) -> list[tuple[RigidTransform3, RigidTransform3]]:
    """Forward-generate A_i = T B_i T^-1 motion pairs (camera motions B_i)."""
    motions = []
    axes = [np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0])]
    for i in range(n):
        axis = axes[i % 3] if i < 3 else rng.normal(size=3)
        axis = axis / np.linalg.norm(axis)
        angle = rng.uniform(0.3, 1.2)
        b = RigidTransform3.from_rotvec(axis * angle, rng.uniform(-0.3, 0.3, size=3))
        a = t_true.compose(b).compose(t_true.inverse())
        if noise > 0:
            from semmap.transforms import se3_exp

            a = a.compose(se3_exp(rng.normal(scale=noise, size=6)))
        motions.append((a, b))
    return motions


class TestHandEye:
    def test_equal_motions_give_identity(self, rng):
        motions = conjugate_motions(RigidTransform3.identity(), rng, n=3)
        t = calibrate_sensor_base(motions)
        assert t.rotation_angle() < 1e-9
        assert np.linalg.norm(t.t) < 1e-9

    def test_recovers_true_transform_noiseless(self, rng):
        for _ in range(10):
            t_true = random_transform(rng, max_angle=1.5, max_trans=0.5)
            motions = conjugate_motions(t_true, rng, n=2)
            t = calibrate_sensor_base(motions)
            err = t.compose(t_true.inverse())
            assert err.rotation_angle() < 1e-6
            assert np.linalg.norm(err.t) < 1e-6

    def test_noisy_motions_stay_close(self, rng):
        t_true = random_transform(rng, max_angle=1.0, max_trans=0.4)
        hits = 0
        for _ in range(30):
            motions = conjugate_motions(t_true, rng, n=20, noise=0.005)
            t = calibrate_sensor_base(motions)
            err = t.compose(t_true.inverse())
            if err.rotation_angle() < 0.01 and np.linalg.norm(err.t) < 0.01:
                hits += 1
        assert hits >= 29

    def test_refinement_does_not_hurt(self, rng):
        t_true = random_transform(rng, max_angle=1.0, max_trans=0.4)
        motions = conjugate_motions(t_true, rng, n=12, noise=0.002)
        from semmap.calibration import _hand_eye_residual

        coarse = calibrate_sensor_base(motions, refine=False)
        fine = calibrate_sensor_base(motions, refine=True)
        cost_coarse = np.sum(_hand_eye_residual(motions, coarse) ** 2)
        cost_fine = np.sum(_hand_eye_residual(motions, fine) ** 2)
        assert cost_fine <= cost_coarse + 1e-12

    def test_pure_translation_unobservable(self, rng):
        a = RigidTransform3(t=[0.3, 0.0, 0.0])
        with pytest.raises(NumericalError, match="unobservable"):
            calibrate_sensor_base([(a, a), (a, a)])

    def test_parallel_axes_name_free_direction(self, rng):
        t_true = random_transform(rng)
        motions = []
        for angle in (0.3, 0.5, 0.8):
            b = RigidTransform3.from_rotvec([0, 0, angle], rng.uniform(-0.2, 0.2, 3))
            motions.append((t_true.compose(b).compose(t_true.inverse()), b))
        with pytest.raises(NumericalError) as err:
            calibrate_sensor_base(motions)
        assert "parallel" in str(err.value)

    def test_too_few_pairs_rejected(self):
        with pytest.raises(ValidationFailure):
            calibrate_sensor_base([(RigidTransform3.identity(), RigidTransform3.identity())])


class TestSensorSensor:
    def test_single_sensor_identity(self):
        cloud = three_plane_cloud()
        results = calibrate_sensor_sensor([cloud])
        assert len(results) == 1
        assert results[0].converged
        assert results[0].transform.is_identity()

    def test_two_sensors_known_baseline(self):
        scene = three_plane_cloud(step=0.04)
        baseline = RigidTransform3.from_rotvec([0.0, 0.02, 0.0], [0.2, 0.0, 0.0])
        # sensor 1 sees the scene from a frame offset by the baseline
        cloud1 = scene.transformed(baseline.inverse())
        results = calibrate_sensor_sensor([scene, cloud1])
        assert results[1].converged
        err = results[1].transform.compose(baseline.inverse())
        assert err.rotation_angle() < 1e-3
        assert np.linalg.norm(err.t) < 1e-3

    def test_flat_wall_sensor_fails_gracefully(self, rng):
        wall = PointCloud(
            np.column_stack([rng.uniform(0, 2, 600), rng.uniform(0, 2, 600), np.zeros(600)])
        )
        results = calibrate_sensor_sensor([wall, wall])
        assert results[0].converged  # reference is trivially the identity
        assert not results[1].converged


class TestAssembleTree:
    def test_single_camera(self):
        base_to_ref = RigidTransform3(t=[0.1, 0.0, 0.5])
        tree = assemble_tree(base_to_ref, [])
        assert tree.root == "base"
        assert tree.frames() == ["base", "cam0"]
        assert tree.resolve("base", "cam0").compose(base_to_ref.inverse()).is_identity()

    def test_three_cameras_resolve_through_reference(self, rng):
        base_to_ref = random_transform(rng)
        offsets = [random_transform(rng) for _ in range(2)]
        tree = assemble_tree(base_to_ref, offsets)
        for i, offset in enumerate(offsets):
            expected = base_to_ref.compose(offset)
            got = tree.resolve("base", f"cam{i + 1}")
            assert got.compose(expected.inverse()).is_identity(tol=1e-9)

    def test_roundtrip_identity(self, rng):
        tree = assemble_tree(random_transform(rng), [random_transform(rng)])
        forward = tree.resolve("cam1", "base")
        backward = tree.resolve("base", "cam1")
        assert forward.compose(backward).is_identity(tol=1e-9)


class TestCalibIo:
    def test_tree_roundtrip(self, tmp_path, rng):
        tree = assemble_tree(random_transform(rng), [random_transform(rng), random_transform(rng)])
        path = tmp_path / "tree.txt"
        write_tree(path, tree)
        back = read_tree(path)
        assert back.root == tree.root
        assert set(back.frames()) == set(tree.frames())
        for frame in ("cam0", "cam1", "cam2"):
            diff = back.resolve("base", frame).compose(tree.resolve("base", frame).inverse())
            assert diff.is_identity(tol=1e-8)

    def test_model_roundtrip(self, tmp_path, rng):
        grid = np.clip(rng.normal(1.0, 0.05, size=(5, 6, 8)), 0.5, 2.0)
        model = DepthDistortionModel(width=K.width, height=K.height, multipliers=grid)
        path = tmp_path / "model.txt"
        write_distortion_model(path, model)
        back = read_distortion_model(path)
        assert back.width == model.width and back.grid_w == model.grid_w
        assert np.allclose(back.multipliers, model.multipliers, atol=1e-9)
