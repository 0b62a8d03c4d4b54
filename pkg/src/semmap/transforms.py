"""Rigid 3D transforms, frame trees, and the SE(3) tangent-space maps.

Transforms are stored as unit quaternion + translation rather than 4x4
matrices so long chains can be re-normalized after every composition.
Quaternions use scalar-last (x, y, z, w) component order throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownFrameError, ValidationFailure

_QUAT_TOL = 1e-9


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValidationFailure("quaternion has near-zero norm")
    q = q / n
    # canonical hemisphere: w >= 0 keeps equality tests stable
    if q[3] < 0.0:
        q = -q
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        s = 0.5 / np.sqrt(t + 1.0)
        w = 0.25 / s
        x = (m[2, 1] - m[1, 2]) * s
        y = (m[0, 2] - m[2, 0]) * s
        z = (m[1, 0] - m[0, 1]) * s
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = 2.0 * np.sqrt(max(1e-12, 1.0 + m[0, 0] - m[1, 1] - m[2, 2]))
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif i == 1:
            s = 2.0 * np.sqrt(max(1e-12, 1.0 + m[1, 1] - m[0, 0] - m[2, 2]))
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = 2.0 * np.sqrt(max(1e-12, 1.0 + m[2, 2] - m[0, 0] - m[1, 1]))
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
    return _normalize_quat(np.array([x, y, z, w]))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def so3_exp(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(3)
    angle = np.linalg.norm(theta)
    k = _skew(theta)
    if angle < 1e-8:
        return np.eye(3) + k + 0.5 * (k @ k)
    return (
        np.eye(3)
        + (np.sin(angle) / angle) * k
        + ((1.0 - np.cos(angle)) / angle**2) * (k @ k)
    )


def so3_log(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    cos_angle = np.clip(0.5 * (np.trace(r) - 1.0), -1.0, 1.0)
    angle = np.arccos(cos_angle)
    if angle < 1e-8:
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if np.pi - angle < 1e-6:
        # near pi the off-diagonal extraction degenerates; use the diagonal
        d = np.diag(r)
        i = int(np.argmax(d))
        axis = np.zeros(3)
        axis[i] = np.sqrt(max(0.0, (d[i] + 1.0) * 0.5))
        j, k = [(1, 2), (0, 2), (0, 1)][i]
        axis[j] = r[i, j] / (2.0 * axis[i])
        axis[k] = r[i, k] / (2.0 * axis[i])
        return axis / np.linalg.norm(axis) * angle
    return (
        angle
        / (2.0 * np.sin(angle))
        * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    )


def _so3_left_jacobian(theta: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(theta)
    k = _skew(theta)
    if angle < 1e-8:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        + ((1.0 - np.cos(angle)) / a2) * k
        + ((angle - np.sin(angle)) / (a2 * angle)) * (k @ k)
    )


def _so3_left_jacobian_inv(theta: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(theta)
    k = _skew(theta)
    if angle < 1e-8:
        return np.eye(3) - 0.5 * k + (k @ k) / 12.0
    coeff = 1.0 / (angle * angle) - (1.0 + np.cos(angle)) / (
        2.0 * angle * np.sin(angle)
    )
    return np.eye(3) - 0.5 * k + coeff * (k @ k)


@dataclass(frozen=True)
class RigidTransform3:
    """SE(3) transform: rotation as unit quaternion (x, y, z, w) + translation.

    ``apply`` maps points from the transform's source frame into its target
    frame: p_target = R p_source + t.
    """

    q: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "q", _normalize_quat(self.q))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))
        self.q.flags.writeable = False
        self.t.flags.writeable = False

    @classmethod
    def identity(cls) -> RigidTransform3:
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> RigidTransform3:
        m = np.asarray(m, dtype=float)
        return cls(quat_from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)) -> RigidTransform3:
        return cls(quat_from_matrix(so3_exp(np.asarray(rotvec, dtype=float))), t)

    @classmethod
    def from_xyzq(cls, values) -> RigidTransform3:
        """Build from the 7-vector (x, y, z, qx, qy, qz, qw) file layout."""
        v = np.asarray(values, dtype=float).reshape(7)
        return cls(v[3:7], v[0:3])

    def to_xyzq(self) -> np.ndarray:
        return np.concatenate([self.t, self.q])

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.t
        return m

    def compose(self, other: RigidTransform3) -> RigidTransform3:
        """Transform applying ``other`` first, then ``self``."""
        q = quat_multiply(self.q, other.q)
        t = self.rotation_matrix @ other.t + self.t
        return RigidTransform3(q, t)

    def inverse(self) -> RigidTransform3:
        q_inv = np.array([-self.q[0], -self.q[1], -self.q[2], self.q[3]])
        return RigidTransform3(q_inv, -(quat_to_matrix(q_inv) @ self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = pts @ self.rotation_matrix.T + self.t
        return out[0] if single else out

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        vecs = np.asarray(vectors, dtype=float)
        single = vecs.ndim == 1
        vecs = np.atleast_2d(vecs)
        out = vecs @ self.rotation_matrix.T
        return out[0] if single else out

    def rotation_angle(self) -> float:
        """Magnitude of the rotation in radians."""
        return 2.0 * np.arctan2(np.linalg.norm(self.q[:3]), abs(self.q[3]))

    def is_identity(self, tol: float = _QUAT_TOL) -> bool:
        return self.rotation_angle() <= tol and np.linalg.norm(self.t) <= tol


def se3_exp(xi: np.ndarray) -> RigidTransform3:
    """Exponential map; ``xi`` is (rho, theta) with translation part first."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    rho, theta = xi[:3], xi[3:]
    r = so3_exp(theta)
    return RigidTransform3(quat_from_matrix(r), _so3_left_jacobian(theta) @ rho)


def se3_log(transform: RigidTransform3) -> np.ndarray:
    theta = so3_log(transform.rotation_matrix)
    rho = _so3_left_jacobian_inv(theta) @ transform.t
    return np.concatenate([rho, theta])


@dataclass(frozen=True)
class ReferenceFrame:
    """Named coordinate frame, optionally anchored to a parent frame."""

    name: str
    parent: tuple[str, RigidTransform3] | None = None


@dataclass(frozen=True)
class TransformTree:
    """Static tree of calibrated frame offsets rooted at the robot base.

    ``edges`` maps child frame -> (parent frame, parent-from-child transform),
    i.e. the stored transform expresses child-frame points in the parent.
    """

    root: str
    edges: dict[str, tuple[str, RigidTransform3]] = field(default_factory=dict)

    def __post_init__(self):
        if self.root in self.edges:
            raise ValidationFailure(f"root frame {self.root!r} cannot have a parent")
        for child, (parent, _) in self.edges.items():
            seen = {child}
            node = parent
            while node != self.root:
                if node in seen:
                    raise ValidationFailure(f"cycle through frame {node!r}")
                if node not in self.edges:
                    raise ValidationFailure(
                        f"frame {node!r} is not reachable from root {self.root!r}"
                    )
                seen.add(node)
                node = self.edges[node][0]

    def frames(self) -> list[str]:
        return [self.root, *self.edges.keys()]

    def _from_root(self, frame: str) -> RigidTransform3:
        """Transform expressing ``frame`` coordinates in the root frame."""
        if frame != self.root and frame not in self.edges:
            raise UnknownFrameError(frame)
        result = RigidTransform3.identity()
        node = frame
        while node != self.root:
            parent, offset = self.edges[node]
            result = offset.compose(result)
            node = parent
        return result

    def resolve(self, from_frame: str, to_frame: str) -> RigidTransform3:
        """Composed offset mapping ``to_frame`` points into ``from_frame``."""
        return self._from_root(from_frame).inverse().compose(self._from_root(to_frame))
