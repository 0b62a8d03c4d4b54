"""Point-cloud and 2D scan alignment by damped iterative least squares.

3D registration minimizes point-to-plane residuals over SE(3); the scan
matcher minimizes point-to-line residuals over (x, y, yaw). Both gate
correspondences by distance (and normal agreement when available), reject
steps that increase the residual, and report rank-deficient geometry via
the converged flag plus a diagnostic message.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationFailure
from .geometry import PointCloud
from .transforms import RigidTransform3, se3_exp

_EIG_RATIO_DEGENERATE = 1e-9


@dataclass(frozen=True)
class RegistrationConfig:
    max_iterations: int = 50
    convergence_eps: float = 1e-6  # parameter-update norm
    correspondence_gate: float = 0.5  # meters
    normal_angle_gate: float = 0.8  # radians
    normal_k: int = 20
    min_inlier_fraction: float = 0.4
    max_mean_residual: float = 0.05  # meters

    def __post_init__(self):
        positive = (
            self.max_iterations,
            self.convergence_eps,
            self.correspondence_gate,
            self.normal_angle_gate,
            self.normal_k,
            self.min_inlier_fraction,
            self.max_mean_residual,
        )
        if any(v <= 0 for v in positive):
            raise ValidationFailure("registration config values must be positive")
        if self.min_inlier_fraction > 1:
            raise ValidationFailure("min_inlier_fraction must be in (0, 1]")


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform3
    converged: bool
    mean_residual: float
    inlier_fraction: float
    iterations: int
    message: str = ""
    residual_history: tuple[float, ...] = ()  # accepted-iteration residuals

    def __post_init__(self):
        if not (0.0 <= self.inlier_fraction <= 1.0):
            raise ValidationFailure("inlier_fraction out of range")
        if self.mean_residual < 0:
            raise ValidationFailure("mean_residual must be non-negative")


def estimate_normals(cloud: PointCloud, k: int = 20,
                     viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Per-point normals from the k-NN covariance, oriented to the viewpoint.

    Neighborhoods of rank < 2 get a zero normal, marking them invalid for
    point-to-plane use.
    """
    pts = cloud.points
    if len(pts) < k:
        raise ValidationFailure(f"need at least k={k} points, got {len(pts)}")
    tree = cKDTree(pts)
    _, nn = tree.query(pts, k=k)
    neighborhoods = pts[nn]  # (n, k, 3)
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    normals = eigvecs[:, :, 0]
    spread = np.maximum(eigvals[:, 2], 1e-30)
    valid = eigvals[:, 1] / spread > 1e-6  # rank >= 2 neighborhoods only
    to_view = np.asarray(viewpoint, dtype=float) - pts
    flip = np.einsum("ni,ni->n", normals, to_view) < 0
    normals[flip] *= -1.0
    normals[~valid] = 0.0
    return PointCloud(pts, cloud.colors, normals)


def _solve_damped(h: np.ndarray, g: np.ndarray, damping: float) -> np.ndarray:
    return np.linalg.solve(h + damping * np.eye(len(h)), g)


def _eig_ratio(h: np.ndarray) -> float:
    eigvals = np.linalg.eigvalsh(h)
    top = max(eigvals[-1], 1e-30)
    return max(eigvals[0], 0.0) / top


class _PointToPlane:
    """Residual/Jacobian assembly for one source/target pair in 3D."""

    def __init__(self, source: PointCloud, target: PointCloud, cfg: RegistrationConfig):
        self.cfg = cfg
        self.src_pts = source.points
        self.src_normals = source.normals
        valid = np.linalg.norm(target.normals, axis=1) > 0.5
        self.tgt_pts = target.points[valid]
        self.tgt_normals = target.normals[valid]
        if len(self.tgt_pts) == 0:
            raise ValidationFailure("target cloud has no valid normals")
        self.tree = cKDTree(self.tgt_pts)
        self.dof = 6

    def linearize(self, transform: RigidTransform3):
        moved = transform.apply(self.src_pts)
        dist, nn = self.tree.query(moved, distance_upper_bound=self.cfg.correspondence_gate)
        matched = np.isfinite(dist)
        if self.src_normals is not None:
            rotated = transform.rotate(self.src_normals)
            safe_nn = np.where(matched, nn, 0)
            cosines = np.einsum("ni,ni->n", rotated, self.tgt_normals[safe_nn])
            matched &= np.abs(np.arccos(np.clip(np.abs(cosines), -1, 1))) <= self.cfg.normal_angle_gate
            # zero (invalid) source normals fail the gate naturally: drop them
            matched &= np.linalg.norm(self.src_normals, axis=1) > 0.5
        idx = np.nonzero(matched)[0]
        inlier_fraction = len(idx) / len(self.src_pts)
        if len(idx) == 0:
            return None, None, 0.0, inlier_fraction
        p = moved[idx]
        q = self.tgt_pts[nn[idx]]
        n = self.tgt_normals[nn[idx]]
        r = np.einsum("ni,ni->n", n, p - q)
        jac = np.hstack([n, np.cross(p, n)])
        return jac, r, float(np.mean(np.abs(r))), inlier_fraction

    @staticmethod
    def step(transform: RigidTransform3, delta: np.ndarray) -> RigidTransform3:
        return se3_exp(delta).compose(transform)


class _PointToLine2D:
    """Residual/Jacobian assembly for 2D scans; parameters are (x, y, yaw)."""

    def __init__(self, source: np.ndarray, target: np.ndarray, cfg: RegistrationConfig):
        self.cfg = cfg
        self.src = np.asarray(source, dtype=float).reshape(-1, 2)
        tgt = np.asarray(target, dtype=float).reshape(-1, 2)
        normals, valid = _scan_normals(tgt, k=min(cfg.normal_k, max(2, len(tgt) - 1)))
        self.tgt = tgt[valid]
        self.tgt_normals = normals[valid]
        if len(self.tgt) == 0:
            raise ValidationFailure("target scan has no usable structure")
        self.tree = cKDTree(self.tgt)
        self.dof = 3

    def linearize(self, params: np.ndarray):
        c, s = np.cos(params[2]), np.sin(params[2])
        rot = np.array([[c, -s], [s, c]])
        moved = self.src @ rot.T + params[:2]
        dist, nn = self.tree.query(moved, distance_upper_bound=self.cfg.correspondence_gate)
        matched = np.isfinite(dist)
        idx = np.nonzero(matched)[0]
        inlier_fraction = len(idx) / len(self.src)
        if len(idx) == 0:
            return None, None, 0.0, inlier_fraction
        p = moved[idx]
        q = self.tgt[nn[idx]]
        n = self.tgt_normals[nn[idx]]
        r = np.einsum("ni,ni->n", n, p - q)
        perp = np.column_stack([-p[:, 1], p[:, 0]])
        jac = np.column_stack([n, np.einsum("ni,ni->n", n, perp)])
        return jac, r, float(np.mean(np.abs(r))), inlier_fraction

    @staticmethod
    def step(params: np.ndarray, delta: np.ndarray) -> np.ndarray:
        out = params + delta
        out[2] = np.arctan2(np.sin(out[2]), np.cos(out[2]))
        return out


def _scan_normals(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    if len(points) < 2:
        return np.zeros_like(points), np.zeros(len(points), dtype=bool)
    tree = cKDTree(points)
    _, nn = tree.query(points, k=min(k + 1, len(points)))
    hoods = points[nn]
    centered = hoods - hoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / hoods.shape[1]
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]
    valid = eigvals[:, 1] > 1e-12
    return normals, valid


def _iterate(problem, state, cfg: RegistrationConfig):
    """Shared damped descent loop; returns a result in the problem's state type."""
    jac, r, mean_abs, inlier_fraction = problem.linearize(state)
    if jac is None:
        return state, False, 0.0, 0.0, 0, "no correspondences under the gate", ()
    best = mean_abs
    history = [best]
    damping = 0.0
    iterations = 0
    reached_eps = False
    h_final = jac.T @ jac
    while iterations < cfg.max_iterations:
        iterations += 1
        h = jac.T @ jac
        g = jac.T @ r
        try:
            delta = _solve_damped(h, -g, max(damping, 1e-12))
        except np.linalg.LinAlgError:
            damping = max(damping * 10.0, 1e-4)
            continue
        candidate = problem.step(state, delta)
        jac_new, r_new, mean_new, frac_new = problem.linearize(candidate)
        if jac_new is None:
            return (state, False, best, inlier_fraction, iterations,
                    "correspondences vanished", tuple(history))
        small_step = np.linalg.norm(delta) < cfg.convergence_eps
        if mean_new <= best * (1.0 + 1e-12) + 1e-15:
            state = candidate
            best = min(best, mean_new)
            history.append(best)
            inlier_fraction = frac_new
            jac, r = jac_new, r_new
            h_final = jac.T @ jac
            damping /= 10.0
        else:
            damping = max(damping * 10.0, 1e-4)
        if small_step:
            # the solver proposes no meaningful motion: local optimum reached
            reached_eps = True
            break
        if damping > 1e10:
            break
    message = ""
    converged = (
        reached_eps
        and inlier_fraction >= cfg.min_inlier_fraction
        and best <= cfg.max_mean_residual
    )
    if _eig_ratio(h_final) < _EIG_RATIO_DEGENERATE:
        converged = False
        message = "unobservable-direction: normal equations are rank-deficient"
    return state, converged, best, inlier_fraction, iterations, message, tuple(history)


def register(source: PointCloud, target: PointCloud,
             guess: RigidTransform3 = RigidTransform3.identity(),
             cfg: RegistrationConfig = RegistrationConfig()) -> RegistrationResult:
    """Align ``source`` onto ``target`` starting from ``guess``.

    Point-to-plane: target normals are estimated when missing. Failure to
    converge (including degenerate geometry) is reported in the result, not
    raised.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValidationFailure("registration needs non-empty clouds")
    if target.normals is None:
        target = estimate_normals(target, k=min(cfg.normal_k, len(target)))
    problem = _PointToPlane(source, target, cfg)
    state, converged, residual, fraction, iterations, message, history = _iterate(
        problem, guess, cfg
    )
    return RegistrationResult(
        transform=state,
        converged=converged,
        mean_residual=residual,
        inlier_fraction=fraction,
        iterations=iterations,
        message=message,
        residual_history=history,
    )


def planar_transform(x: float, y: float, yaw: float) -> RigidTransform3:
    return RigidTransform3.from_rotvec([0.0, 0.0, yaw], [x, y, 0.0])


def planar_params(transform: RigidTransform3) -> np.ndarray:
    m = transform.rotation_matrix
    return np.array([transform.t[0], transform.t[1], np.arctan2(m[1, 0], m[0, 0])])


def match_scans(source: np.ndarray, target: np.ndarray,
                guess: RigidTransform3 = RigidTransform3.identity(),
                cfg: RegistrationConfig = RegistrationConfig()) -> RegistrationResult:
    """2D point-to-line alignment of scan points; 3 degrees of freedom."""
    source = np.asarray(source, dtype=float).reshape(-1, 2)
    target = np.asarray(target, dtype=float).reshape(-1, 2)
    if len(source) == 0 or len(target) == 0:
        raise ValidationFailure("scan matching needs non-empty scans")
    problem = _PointToLine2D(source, target, cfg)
    state, converged, residual, fraction, iterations, message, history = _iterate(
        problem, planar_params(guess), cfg
    )
    return RegistrationResult(
        transform=planar_transform(*state),
        converged=converged,
        mean_residual=residual,
        inlier_fraction=fraction,
        iterations=iterations,
        message=message,
        residual_history=history,
    )
