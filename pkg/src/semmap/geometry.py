"""Geometric primitives: point clouds, map elements, and bounding boxes.

Elements are canonicalized on construction (unit directions/normals with a
fixed sign convention) so that equal primitives compare equal exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationFailure
from .transforms import RigidTransform3

_UNIT_TOL = 1e-9

POINT = "point"
LINE = "line"
PLANE = "plane"
KINDS = (POINT, LINE, PLANE)


def _canonical_direction(v: np.ndarray) -> tuple[np.ndarray, float]:
    """Unit vector with the first component of magnitude > tol made positive.

    Returns (canonical vector, sign flip applied: +1 or -1).
    """
    v = np.asarray(v, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValidationFailure("direction vector has near-zero norm")
    v = v / n
    sign = 1.0
    for component in v:
        if abs(component) > 1e-12:
            if component < 0:
                sign = -1.0
            break
    return v * sign, sign


@dataclass(frozen=True)
class GeometricElement:
    """Tagged union over point / infinite line / infinite plane.

    Lines are stored as (closest point to origin, unit direction); planes in
    Hessian normal form normal . x = offset. Both are sign-canonicalized so
    identical primitives have identical fields.
    """

    id: str
    kind: str
    point: np.ndarray | None = None
    direction: np.ndarray | None = None
    normal: np.ndarray | None = None
    offset: float | None = None
    individual: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationFailure(f"unknown element kind {self.kind!r}")
        for name in ("point", "direction", "normal"):
            v = getattr(self, name)
            if v is not None:
                arr = np.asarray(v, dtype=float).reshape(3)
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)
        populated = {
            POINT: (True, False, False, False),
            LINE: (True, True, False, False),
            PLANE: (False, False, True, True),
        }[self.kind]
        actual = (
            self.point is not None,
            self.direction is not None,
            self.normal is not None,
            self.offset is not None,
        )
        if actual != populated:
            raise ValidationFailure(
                f"element {self.id!r}: fields do not match kind {self.kind!r}"
            )
        if self.direction is not None and abs(np.linalg.norm(self.direction) - 1) > _UNIT_TOL:
            raise ValidationFailure(f"element {self.id!r}: direction not unit-norm")
        if self.normal is not None and abs(np.linalg.norm(self.normal) - 1) > _UNIT_TOL:
            raise ValidationFailure(f"element {self.id!r}: normal not unit-norm")

    @classmethod
    def make_point(cls, id: str, xyz, individual: str | None = None) -> GeometricElement:
        return cls(id=id, kind=POINT, point=np.asarray(xyz, dtype=float), individual=individual)

    @classmethod
    def make_line(cls, id: str, point_on_line, direction, individual: str | None = None) -> GeometricElement:
        d, _ = _canonical_direction(direction)
        p = np.asarray(point_on_line, dtype=float).reshape(3)
        p = p - np.dot(p, d) * d  # closest point to origin
        return cls(id=id, kind=LINE, point=p, direction=d, individual=individual)

    @classmethod
    def make_plane(cls, id: str, normal, offset: float, individual: str | None = None) -> GeometricElement:
        n, sign = _canonical_direction(normal)
        return cls(id=id, kind=PLANE, normal=n, offset=float(offset) * sign, individual=individual)

    def transformed(self, transform: RigidTransform3, new_id: str | None = None) -> GeometricElement:
        eid = self.id if new_id is None else new_id
        if self.kind == POINT:
            return GeometricElement.make_point(eid, transform.apply(self.point), self.individual)
        if self.kind == LINE:
            return GeometricElement.make_line(
                eid, transform.apply(self.point), transform.rotate(self.direction), self.individual
            )
        n = transform.rotate(self.normal)
        # a point on the old plane maps onto the new one
        p = transform.apply(self.normal * self.offset)
        return GeometricElement.make_plane(eid, n, float(np.dot(n, p)), self.individual)


@dataclass(frozen=True)
class GeometricSet:
    """Ordered element store M with the semantically relevant subset M_s."""

    elements: tuple[GeometricElement, ...] = ()
    semantic_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "semantic_ids", frozenset(self.semantic_ids))
        ids = [e.id for e in self.elements]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationFailure(f"duplicate element ids: {dupes}")
        missing = self.semantic_ids - set(ids)
        if missing:
            raise ValidationFailure(f"semantic_ids not present in elements: {sorted(missing)}")

    def by_id(self, element_id: str) -> GeometricElement:
        for e in self.elements:
            if e.id == element_id:
                return e
        raise KeyError(element_id)

    def ids(self) -> list[str]:
        return [e.id for e in self.elements]


@dataclass(frozen=True)
class PointCloud:
    """Raw 3D points with optional per-point colors (0-255) and unit normals.

    A zero normal marks a point whose normal estimate was degenerate; such
    points are skipped by consumers that need surface orientation.
    """

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(colors) != len(pts):
                raise ValidationFailure("colors length does not match points")
            object.__setattr__(self, "colors", colors)
        if self.normals is not None:
            normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(normals) != len(pts):
                raise ValidationFailure("normals length does not match points")
            norms = np.linalg.norm(normals, axis=1)
            bad = (np.abs(norms - 1.0) > 1e-6) & (norms > 1e-12)
            if bad.any():
                raise ValidationFailure("normals must be unit-norm (or zero for invalid)")
            object.__setattr__(self, "normals", normals)

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, transform: RigidTransform3) -> PointCloud:
        """Map points by the transform; normals rotate, colors pass through."""
        normals = None if self.normals is None else transform.rotate(self.normals)
        return PointCloud(transform.apply(self.points), self.colors, normals)

    def concatenated(self, other: PointCloud) -> PointCloud:
        points = np.vstack([self.points, other.points])
        colors = None
        if self.colors is not None and other.colors is not None:
            colors = np.vstack([self.colors, other.colors])
        normals = None
        if self.normals is not None and other.normals is not None:
            normals = np.vstack([self.normals, other.normals])
        return PointCloud(points, colors, normals)


def transform_cloud(cloud: PointCloud, transform: RigidTransform3) -> PointCloud:
    return cloud.transformed(transform)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Average points (and attributes) within each voxel.

    Output order follows sorted voxel indices, so the result is deterministic.
    A vanishing voxel size degenerates to one point per voxel, i.e. the input.
    """
    if voxel_size <= 0:
        raise ValidationFailure("voxel_size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys = keys[order]
    boundaries = np.any(np.diff(keys, axis=0) != 0, axis=1)
    starts = np.concatenate([[0], np.nonzero(boundaries)[0] + 1])
    counts = np.diff(np.concatenate([starts, [len(keys)]]))

    def _segment_mean(values: np.ndarray) -> np.ndarray:
        sums = np.add.reduceat(values[order], starts, axis=0)
        return sums / counts[:, None]

    points = _segment_mean(cloud.points)
    colors = None
    if cloud.colors is not None:
        colors = np.clip(np.rint(_segment_mean(cloud.colors.astype(float))), 0, 255).astype(np.uint8)
    normals = None
    if cloud.normals is not None:
        normals = _segment_mean(cloud.normals)
        norms = np.linalg.norm(normals, axis=1)
        ok = norms > 1e-12
        normals[ok] /= norms[ok, None]
        normals[~ok] = 0.0
    return PointCloud(points, colors, normals)


@dataclass(frozen=True)
class BoundingBox:
    """Oriented box linking a map volume to a knowledge-base individual."""

    id: str
    center: np.ndarray
    half_extents: np.ndarray
    orientation: RigidTransform3  # rotation-only; translation ignored
    individual: str
    class_name: str

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3)
        half = np.asarray(self.half_extents, dtype=float).reshape(3)
        if not np.all(half > 0):
            raise ValidationFailure(f"box {self.id!r}: half_extents must be strictly positive")
        center.flags.writeable = False
        half.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_extents", half)

    @classmethod
    def make(cls, id, center, half_extents, quat_xyzw, individual, class_name) -> BoundingBox:
        return cls(
            id=id,
            center=center,
            half_extents=half_extents,
            orientation=RigidTransform3(np.asarray(quat_xyzw, dtype=float)),
            individual=individual,
            class_name=class_name,
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the oriented box (inclusive)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        local = (pts - self.center) @ self.orientation.rotation_matrix
        return np.all(np.abs(local) <= self.half_extents + 1e-12, axis=1)

    def with_class(self, class_name: str) -> BoundingBox:
        return replace(self, class_name=class_name)
