from __future__ import annotations

import numpy as np
import pytest

from semmap.errors import UnknownFrameError, ValidationFailure
from semmap.transforms import RigidTransform3, TransformTree, se3_exp, se3_log

from conftest import random_transform
from oracles import compose_via_matrices, homogeneous, transforms_close


def rot_z(deg: float, t=(0.0, 0.0, 0.0)) -> RigidTransform3:
    return RigidTransform3.from_rotvec([0, 0, np.deg2rad(deg)], t)


class TestRigidTransform:
    def test_identity_compose(self):
        t = rot_z(37.0, (1.0, -2.0, 0.5))
        assert transforms_close(homogeneous(t), RigidTransform3.identity().compose(t))
        assert transforms_close(homogeneous(t), t.compose(RigidTransform3.identity()))

    def test_inverse_roundtrip(self):
        t = rot_z(81.0, (0.3, 4.0, -1.0))
        round_trip = t.compose(t.inverse())
        assert round_trip.rotation_angle() < 1e-9
        assert np.linalg.norm(round_trip.t) < 1e-9

    def test_quarter_turns_match_matrix_oracle(self):
        step = rot_z(90.0, (1.0, 0.0, 0.0))
        expected = compose_via_matrices(step, step)
        combined = step.compose(step)
        assert transforms_close(expected, combined)
        assert np.allclose(combined.t, [1.0, 1.0, 0.0])
        assert np.isclose(combined.rotation_angle(), np.pi)

    def test_compose_associative(self, rng):
        for _ in range(25):
            a, b, c = (random_transform(rng) for _ in range(3))
            left = a.compose(b).compose(c)
            right = a.compose(b.compose(c))
            assert transforms_close(homogeneous(left), right, tol=1e-9)

    def test_compose_matches_matrix_product(self, rng):
        for _ in range(50):
            a, b = random_transform(rng), random_transform(rng)
            assert transforms_close(compose_via_matrices(a, b), a.compose(b))

    def test_quaternion_stays_unit_over_long_chain(self, rng):
        t = RigidTransform3.identity()
        step = random_transform(rng, max_angle=0.3, max_trans=0.1)
        for _ in range(2000):
            t = t.compose(step)
        assert abs(np.linalg.norm(t.q) - 1.0) < 1e-12

    def test_apply_points_and_vectors(self):
        t = rot_z(90.0, (0.0, 0.0, 5.0))
        assert np.allclose(t.apply([1.0, 0.0, 0.0]), [0.0, 1.0, 5.0], atol=1e-12)
        assert np.allclose(t.rotate([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_matrix_roundtrip(self, rng):
        for _ in range(20):
            t = random_transform(rng)
            again = RigidTransform3.from_matrix(t.matrix())
            assert transforms_close(homogeneous(t), again)

    def test_xyzq_roundtrip(self, rng):
        t = random_transform(rng)
        again = RigidTransform3.from_xyzq(t.to_xyzq())
        assert transforms_close(homogeneous(t), again)


class TestSe3Maps:
    def test_exp_log_roundtrip(self, rng):
        for _ in range(50):
            xi = rng.uniform(-1.5, 1.5, size=6)
            assert np.allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)

    def test_log_exp_roundtrip(self, rng):
        for _ in range(50):
            t = random_transform(rng, max_angle=2.5)
            again = se3_exp(se3_log(t))
            assert transforms_close(homogeneous(t), again, tol=1e-8)

    def test_small_angle_stability(self):
        xi = np.array([1e-10, -2e-10, 3e-10, 1e-11, 1e-11, -1e-11])
        assert np.allclose(se3_log(se3_exp(xi)), xi, atol=1e-15)

    def test_near_pi_rotation(self):
        t = RigidTransform3.from_rotvec([0.0, 0.0, np.pi - 1e-9], [1.0, 2.0, 3.0])
        again = se3_exp(se3_log(t))
        assert transforms_close(homogeneous(t), again, tol=1e-6)


def chain_tree() -> tuple[TransformTree, RigidTransform3, RigidTransform3]:
    t1 = rot_z(30.0, (0.1, 0.0, 0.2))
    t2 = rot_z(-45.0, (0.0, 0.3, 0.0))
    tree = TransformTree(
        root="base",
        edges={"camA": ("base", t1), "camB": ("camA", t2)},
    )
    return tree, t1, t2


class TestTransformTree:
    def test_resolve_self_is_identity(self):
        tree, _, _ = chain_tree()
        for frame in ("base", "camA", "camB"):
            assert tree.resolve(frame, frame).is_identity()

    def test_resolve_chain_matches_matrix_oracle(self):
        tree, t1, t2 = chain_tree()
        expected = compose_via_matrices(t1, t2)
        assert transforms_close(expected, tree.resolve("base", "camB"))

    def test_resolve_reverse_is_inverse(self):
        tree, _, _ = chain_tree()
        forward = tree.resolve("base", "camB")
        backward = tree.resolve("camB", "base")
        assert forward.compose(backward).is_identity(tol=1e-9)

    def test_resolve_random_trees_matches_left_fold(self, rng):
        for _ in range(10):
            depth = rng.integers(1, 6)
            edges = {}
            transforms = []
            parent = "f0"
            for i in range(depth):
                t = random_transform(rng)
                child = f"f{i + 1}"
                edges[child] = (parent, t)
                transforms.append(t)
                parent = child
            tree = TransformTree(root="f0", edges=edges)
            expected = np.eye(4)
            for t in transforms:
                expected = expected @ homogeneous(t)
            assert transforms_close(expected, tree.resolve("f0", parent), tol=1e-8)

    def test_unknown_frame_is_named(self):
        tree, _, _ = chain_tree()
        with pytest.raises(UnknownFrameError, match="camZ"):
            tree.resolve("base", "camZ")

    def test_cycle_rejected(self):
        t = rot_z(10.0)
        with pytest.raises(ValidationFailure):
            TransformTree(root="base", edges={"a": ("b", t), "b": ("a", t)})

    def test_unreachable_frame_rejected(self):
        t = rot_z(10.0)
        with pytest.raises(ValidationFailure):
            TransformTree(root="base", edges={"a": ("orphan", t)})
