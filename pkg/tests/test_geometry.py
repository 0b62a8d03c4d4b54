from __future__ import annotations

import numpy as np
import pytest

from semmap.errors import ValidationFailure
from semmap.geometry import (
    BoundingBox,
    GeometricElement,
    GeometricSet,
    PointCloud,
    transform_cloud,
    voxel_downsample,
)
from semmap.kb import KnowledgeBase, atom
from semmap.semantic_map import SemanticMap, validate_map
from semmap.transforms import RigidTransform3

from conftest import random_transform


class TestElements:
    def test_line_canonicalization_unique(self):
        a = GeometricElement.make_line("l", [1.0, 2.0, 3.0], [0.0, 0.0, 2.0])
        b = GeometricElement.make_line("l", [1.0, 2.0, 9.0], [0.0, 0.0, -1.0])
        assert np.allclose(a.point, b.point)
        assert np.allclose(a.direction, b.direction)
        assert np.isclose(np.dot(a.point, a.direction), 0.0)

    def test_plane_sign_canonicalization(self):
        a = GeometricElement.make_plane("p", [0.0, 0.0, -1.0], -2.0)
        b = GeometricElement.make_plane("p", [0.0, 0.0, 1.0], 2.0)
        assert np.allclose(a.normal, b.normal)
        assert a.offset == b.offset

    def test_kind_fields_enforced(self):
        with pytest.raises(ValidationFailure):
            GeometricElement(id="bad", kind="point", point=None)
        with pytest.raises(ValidationFailure):
            GeometricElement(
                id="bad", kind="point", point=np.zeros(3), offset=1.0, normal=np.array([1.0, 0, 0])
            )

    def test_plane_transform_consistent(self, rng):
        plane = GeometricElement.make_plane("p", [0.3, -0.4, 0.8], 1.7)
        t = random_transform(rng)
        moved = plane.transformed(t)
        # transformed plane must contain transformed sample points of the original
        for _ in range(5):
            u = rng.normal(size=3)
            u -= np.dot(u, plane.normal) * plane.normal
            p_on = plane.normal * plane.offset + u
            p_new = t.apply(p_on)
            assert abs(np.dot(moved.normal, p_new) - moved.offset) < 1e-9

    def test_line_transform_consistent(self, rng):
        line = GeometricElement.make_line("l", [1.0, 0.0, 2.0], [1.0, 1.0, 0.0])
        t = random_transform(rng)
        moved = line.transformed(t)
        for s in (-2.0, 0.5, 3.0):
            p_new = t.apply(line.point + s * line.direction)
            d = p_new - moved.point
            perp = d - np.dot(d, moved.direction) * moved.direction
            assert np.linalg.norm(perp) < 1e-9

    def test_geometric_set_invariants(self):
        e1 = GeometricElement.make_point("a", [0, 0, 0])
        e2 = GeometricElement.make_point("b", [1, 0, 0])
        gs = GeometricSet((e1, e2), {"a"})
        assert gs.semantic_ids == {"a"}
        with pytest.raises(ValidationFailure):
            GeometricSet((e1, e1), set())
        with pytest.raises(ValidationFailure):
            GeometricSet((e1,), {"zz"})


class TestPointCloud:
    def test_transform_identity(self):
        cloud = PointCloud(np.array([[1.0, 0.0, 0.0]]), colors=np.array([[255, 0, 0]]))
        out = transform_cloud(cloud, RigidTransform3.identity())
        assert np.allclose(out.points, cloud.points)
        assert np.array_equal(out.colors, cloud.colors)

    def test_translation(self):
        cloud = PointCloud(np.array([[1.0, 0.0, 0.0]]))
        out = transform_cloud(cloud, RigidTransform3(t=[0.0, 0.0, 5.0]))
        assert np.allclose(out.points, [[1.0, 0.0, 5.0]])

    def test_roundtrip_random(self, rng):
        cloud = PointCloud(
            rng.normal(size=(100, 3)),
            normals=_unit_rows(rng.normal(size=(100, 3))),
        )
        t = random_transform(rng)
        back = cloud.transformed(t).transformed(t.inverse())
        assert np.allclose(back.points, cloud.points, atol=1e-9)
        assert np.allclose(back.normals, cloud.normals, atol=1e-9)

    def test_normals_rotate_only(self, rng):
        cloud = PointCloud(np.zeros((1, 3)), normals=np.array([[0.0, 0.0, 1.0]]))
        t = RigidTransform3(t=[5.0, 5.0, 5.0])
        out = cloud.transformed(t)
        assert np.allclose(out.normals, [[0.0, 0.0, 1.0]])

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValidationFailure):
            PointCloud(np.zeros((2, 3)), colors=np.zeros((1, 3), dtype=np.uint8))


def _unit_rows(m):
    return m / np.linalg.norm(m, axis=1, keepdims=True)


class TestVoxelDownsample:
    def test_tiny_voxel_is_identity_up_to_order(self, rng):
        cloud = PointCloud(rng.uniform(0, 1, size=(50, 3)))
        out = voxel_downsample(cloud, 1e-9)
        assert len(out) == 50
        assert np.allclose(np.sort(out.points, axis=0), np.sort(cloud.points, axis=0))

    def test_merges_within_voxel(self):
        cloud = PointCloud(np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [5.0, 5.0, 5.0]]))
        out = voxel_downsample(cloud, 1.0)
        assert len(out) == 2
        assert np.allclose(out.points[0], [0.15, 0.15, 0.15])

    def test_deterministic(self, rng):
        cloud = PointCloud(rng.uniform(0, 1, size=(200, 3)))
        a = voxel_downsample(cloud, 0.1)
        b = voxel_downsample(cloud, 0.1)
        assert np.array_equal(a.points, b.points)


class TestBoundingBox:
    def test_contains_axis_aligned(self):
        box = BoundingBox.make("b", [0, 0, 0], [1, 1, 1], [0, 0, 0, 1], "t1", "Table")
        inside = box.contains(np.array([[0.5, 0.5, 0.5], [1.5, 0.0, 0.0]]))
        assert inside.tolist() == [True, False]

    def test_contains_oriented(self):
        # square rotated 45 deg about z: world x-axis now crosses a face
        # diagonal, so (1.2, 0) is inside while the corner direction shrinks
        q = RigidTransform3.from_rotvec([0, 0, np.pi / 4]).q
        box = BoundingBox.make("b", [0, 0, 0], [1, 1, 0.1], q, "t1", "Table")
        assert box.contains([1.2, 0.0, 0.0])[0]
        assert not box.contains([1.2, 1.2, 0.0])[0]

    def test_positive_extents_required(self):
        with pytest.raises(ValidationFailure):
            BoundingBox.make("b", [0, 0, 0], [1, 0, 1], [0, 0, 0, 1], "t1", "Table")


def fixture_map() -> SemanticMap:
    kb = KnowledgeBase(
        classes={"Table"},
        individuals={"table1"},
        atoms={
            atom("is-a", "Table", "Physical_Thing"),
            atom("instance-of", "table1", "Table"),
            atom("hasPosition", "table1", 1.0, 0.5, 0.0),
        },
        spatial_predicates={"hasPosition"},
        function_like={"hasPosition"},
    )
    element = GeometricElement.make_point("e1", [1.0, 0.5, 0.0], individual="table1")
    return SemanticMap(
        geometry=GeometricSet((element,), {"e1"}),
        kb=kb,
    )


class TestValidateMap:
    def test_well_formed_map_clean(self):
        assert validate_map(fixture_map()) == []

    def test_empty_spatial_subset_flagged(self):
        m = fixture_map()
        bad = SemanticMap(
            frame=m.frame,
            geometry=m.geometry,
            kb=KnowledgeBase(
                classes=m.kb.classes,
                individuals=m.kb.individuals,
                atoms={a for a in m.kb.atoms if a.predicate != "hasPosition"},
                spatial_predicates=m.kb.spatial_predicates,
                function_like=m.kb.function_like,
            ),
        )
        codes = [v.code for v in validate_map(bad)]
        assert "empty-spatial-subset" in codes

    def test_function_like_cardinality_flagged(self):
        m = fixture_map()
        bad = SemanticMap(
            frame=m.frame,
            geometry=m.geometry,
            kb=m.kb.with_atoms({atom("hasPosition", "table1", 9.0, 9.0, 9.0)}),
        )
        codes = [v.code for v in validate_map(bad)]
        assert "function-like-cardinality" in codes

    def test_dangling_individual_flagged(self):
        m = fixture_map()
        element = GeometricElement.make_point("e2", [0, 0, 0], individual="ghost")
        bad = SemanticMap(
            frame=m.frame,
            geometry=GeometricSet(m.geometry.elements + (element,), m.geometry.semantic_ids),
            kb=m.kb,
        )
        codes = [v.code for v in validate_map(bad)]
        assert "dangling-individual" in codes

    def test_unlinked_semantic_element_is_warning_only(self):
        m = fixture_map()
        element = GeometricElement.make_point("e2", [0, 0, 0])
        flagged = SemanticMap(
            frame=m.frame,
            geometry=GeometricSet(m.geometry.elements + (element,), {"e1", "e2"}),
            kb=m.kb,
        )
        violations = validate_map(flagged)
        assert all(v.severity == "warning" for v in violations)
        assert any(v.code == "unlinked-semantic-element" for v in violations)
