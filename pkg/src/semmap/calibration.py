"""Sensor calibration: depth-channel undistortion, the robot-to-camera
(hand-eye) transform, camera-to-camera offsets, and transform-tree assembly.

The depth model is a per-cell multiplier grid, bilinear across the image and
linear in depth between fixed control levels; it corrects the typical
"flat walls look curved" error of consumer depth cameras.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationFailure
from .geometry import GeometricElement, PointCloud
from .projection import DepthImage, PinholeIntrinsics
from .registration import RegistrationConfig, RegistrationResult, register
from .transforms import RigidTransform3, TransformTree, quat_to_matrix, se3_exp, se3_log, so3_log

log = logging.getLogger(__name__)

DEPTH_LEVELS = (0.5, 1.5, 2.5, 3.5, 4.5)  # meters, 1 m spacing
MULTIPLIER_RANGE = (0.5, 2.0)
MIN_VALID_PIXELS = 100


@dataclass(frozen=True)
class DepthDistortionModel:
    """Multiplier grid: (level, cell row, cell column) -> depth scale factor."""

    width: int
    height: int
    grid_w: int = 8
    grid_h: int = 6
    levels: tuple[float, ...] = DEPTH_LEVELS
    multipliers: np.ndarray | None = None

    def __post_init__(self):
        if self.multipliers is None:
            grid = np.ones((len(self.levels), self.grid_h, self.grid_w))
        else:
            grid = np.asarray(self.multipliers, dtype=float).reshape(
                len(self.levels), self.grid_h, self.grid_w
            )
        if grid.min() < MULTIPLIER_RANGE[0] - 1e-9 or grid.max() > MULTIPLIER_RANGE[1] + 1e-9:
            raise ValidationFailure("multipliers outside the allowed range")
        grid.flags.writeable = False
        object.__setattr__(self, "multipliers", grid)
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))

    def is_identity(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.multipliers, 1.0, atol=tol))

    def _cell_coords(self, us: np.ndarray, vs: np.ndarray):
        gx = np.clip(us / self.width * self.grid_w - 0.5, 0.0, self.grid_w - 1.0)
        gy = np.clip(vs / self.height * self.grid_h - 0.5, 0.0, self.grid_h - 1.0)
        return gx, gy

    def multiplier_at(self, us: np.ndarray, vs: np.ndarray, depths: np.ndarray) -> np.ndarray:
        """Bilinear in pixels, linear in depth, clamped at the level ends."""
        gx, gy = self._cell_coords(np.asarray(us, float), np.asarray(vs, float))
        x0 = np.floor(gx).astype(int)
        y0 = np.floor(gy).astype(int)
        x1 = np.minimum(x0 + 1, self.grid_w - 1)
        y1 = np.minimum(y0 + 1, self.grid_h - 1)
        wx = gx - x0
        wy = gy - y0
        levels = np.asarray(self.levels)
        d = np.clip(np.asarray(depths, float), levels[0], levels[-1])
        li = np.clip(np.searchsorted(levels, d) - 1, 0, len(levels) - 2)
        ld = (d - levels[li]) / (levels[li + 1] - levels[li])

        def grid_at(level_idx):
            g = self.multipliers
            return (
                g[level_idx, y0, x0] * (1 - wx) * (1 - wy)
                + g[level_idx, y0, x1] * wx * (1 - wy)
                + g[level_idx, y1, x0] * (1 - wx) * wy
                + g[level_idx, y1, x1] * wx * wy
            )

        return grid_at(li) * (1 - ld) + grid_at(li + 1) * ld


def undistort(img: DepthImage, model: DepthDistortionModel) -> DepthImage:
    """Scale every nonzero depth by its interpolated multiplier."""
    if (img.width, img.height) != (model.width, model.height):
        raise ValidationFailure("image size does not match the distortion model")
    if model.is_identity():
        return img
    vs, us = np.nonzero(img.depth > 0)
    depth = img.depth.copy()
    if len(us):
        depth[vs, us] = img.depth[vs, us] * model.multiplier_at(us, vs, img.depth[vs, us])
    return DepthImage(img.width, img.height, depth)


def _expected_plane_depth(plane: GeometricElement, k: PinholeIntrinsics,
                          us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    rays = np.column_stack(
        [(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones(len(us))]
    )
    denom = rays @ plane.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        z = plane.offset / denom
    z[np.abs(denom) < 1e-9] = np.nan
    return z


def fit_depth_model(
    observations: list[tuple[DepthImage, GeometricElement]],
    k: PinholeIntrinsics,
    grid_w: int = 8,
    grid_h: int = 6,
) -> DepthDistortionModel:
    """Median multiplier per image cell and depth level from flat-target views.

    Each observation pairs a raw depth image with the true plane (camera
    frame) it captured. Cells or levels without samples keep multiplier 1.0;
    observations with fewer than 100 valid pixels are skipped.
    """
    levels = np.asarray(DEPTH_LEVELS)
    samples: dict[tuple[int, int, int], list[float]] = {}
    for img, plane in observations:
        if plane.kind != "plane":
            raise ValidationFailure("observations need plane elements")
        vs, us = np.nonzero(img.depth > 0)
        if len(us) < MIN_VALID_PIXELS:
            log.warning("skipping observation with %d valid pixels", len(us))
            continue
        measured = img.depth[vs, us]
        expected = _expected_plane_depth(plane, k, us.astype(float), vs.astype(float))
        ok = np.isfinite(expected) & (expected > 0)
        us, vs, measured, expected = us[ok], vs[ok], measured[ok], expected[ok]
        cell_x = np.clip((us / img.width * grid_w).astype(int), 0, grid_w - 1)
        cell_y = np.clip((vs / img.height * grid_h).astype(int), 0, grid_h - 1)
        level_idx = np.argmin(np.abs(measured[:, None] - levels[None, :]), axis=1)
        ratio = expected / measured
        for li, cy, cx, value in zip(level_idx, cell_y, cell_x, ratio):
            samples.setdefault((int(li), int(cy), int(cx)), []).append(float(value))
    grid = np.ones((len(levels), grid_h, grid_w))
    for (li, cy, cx), values in samples.items():
        grid[li, cy, cx] = np.clip(np.median(values), *MULTIPLIER_RANGE)
    return DepthDistortionModel(
        width=k.width, height=k.height, grid_w=grid_w, grid_h=grid_h,
        levels=DEPTH_LEVELS, multipliers=grid,
    )


def _left_quat_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [w, -z, y, x],
            [z, w, -x, y],
            [-y, x, w, z],
            [-x, -y, -z, w],
        ]
    )


def _right_quat_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [w, z, -y, x],
            [-z, w, x, y],
            [y, -x, w, z],
            [-x, -y, -z, w],
        ]
    )


def _check_axis_observability(motions) -> None:
    axes = []
    for a, _ in motions:
        theta = so3_log(a.rotation_matrix)
        angle = np.linalg.norm(theta)
        if angle > 1e-8:
            axes.append(theta / angle)
    if not axes:
        raise NumericalError(
            "hand-eye rotation is unobservable: no rotational motion at all "
            "(every axis is free)"
        )
    reference = axes[0]
    if all(abs(abs(np.dot(reference, axis)) - 1.0) < 1e-9 for axis in axes[1:]):
        raise NumericalError(
            "hand-eye rotation is unobservable: all motion rotation axes are "
            f"parallel; the free direction is ({reference[0]:.6f}, "
            f"{reference[1]:.6f}, {reference[2]:.6f})"
        )


def calibrate_sensor_base(
    motions: list[tuple[RigidTransform3, RigidTransform3]],
    refine: bool = False,
) -> RigidTransform3:
    """Solve A_i T = T B_i for the fixed sensor mount transform T.

    ``motions`` pairs robot motions A_i (odometry deltas) with camera
    motions B_i (registration deltas over the same interval). The rotation
    comes from a linear least squares over quaternions, the translation from
    the stacked linear system (R_Ai - I) t = R_T t_Bi - t_Ai. ``refine``
    adds a damped Gauss-Newton polish of the full 6-DoF cost.
    """
    if len(motions) < 2:
        raise ValidationFailure("need at least two motion pairs")
    _check_axis_observability(motions)
    stacked = np.vstack(
        [_left_quat_matrix(a.q) - _right_quat_matrix(b.q) for a, b in motions]
    )
    _, _, vt = np.linalg.svd(stacked)
    q = vt[-1]
    rot = quat_to_matrix(q / np.linalg.norm(q))
    lhs = np.vstack([a.rotation_matrix - np.eye(3) for a, _ in motions])
    rhs = np.concatenate([rot @ b.t - a.t for a, b in motions])
    t, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    estimate = RigidTransform3(q, t)
    if refine:
        estimate = _refine_hand_eye(motions, estimate)
    return estimate


def _hand_eye_residual(motions, t: RigidTransform3) -> np.ndarray:
    t_inv = t.inverse()
    errs = [
        se3_log(a.compose(t).compose(b.inverse()).compose(t_inv))
        for a, b in motions
    ]
    return np.concatenate(errs)


def _refine_hand_eye(motions, estimate: RigidTransform3,
                     max_iter: int = 30) -> RigidTransform3:
    damping = 1e-6
    best = estimate
    best_cost = float(np.sum(_hand_eye_residual(motions, best) ** 2))
    for _ in range(max_iter):
        r = _hand_eye_residual(motions, best)
        jac = np.zeros((len(r), 6))
        h = 1e-7
        for kdim in range(6):
            delta = np.zeros(6)
            delta[kdim] = h
            plus = _hand_eye_residual(motions, best.compose(se3_exp(delta)))
            minus = _hand_eye_residual(motions, best.compose(se3_exp(-delta)))
            jac[:, kdim] = (plus - minus) / (2 * h)
        try:
            step = np.linalg.solve(jac.T @ jac + damping * np.eye(6), -(jac.T @ r))
        except np.linalg.LinAlgError:
            damping *= 10
            continue
        candidate = best.compose(se3_exp(step))
        cost = float(np.sum(_hand_eye_residual(motions, candidate) ** 2))
        if cost < best_cost:
            best, best_cost = candidate, cost
            damping = max(damping / 10, 1e-12)
            if np.linalg.norm(step) < 1e-12:
                break
        else:
            damping *= 10
            if damping > 1e8:
                break
    return best


def calibrate_sensor_sensor(
    clouds: list[PointCloud],
    reference: int = 0,
    reg_cfg: RegistrationConfig = RegistrationConfig(),
    guesses: list[RigidTransform3] | None = None,
) -> list[RegistrationResult]:
    """Offsets reference<-sensor_i from a simultaneous multi-camera snapshot.

    Every sensor's cloud is registered onto the reference sensor's cloud.
    A failed registration yields a non-converged entry for that sensor while
    the others are still returned; the reference entry is the identity.
    """
    if not clouds:
        raise ValidationFailure("need at least one sensor cloud")
    if not (0 <= reference < len(clouds)):
        raise ValidationFailure("reference index out of range")
    results: list[RegistrationResult] = []
    target = clouds[reference]
    for i, cloud in enumerate(clouds):
        if i == reference:
            results.append(
                RegistrationResult(
                    transform=RigidTransform3.identity(),
                    converged=True,
                    mean_residual=0.0,
                    inlier_fraction=1.0,
                    iterations=0,
                )
            )
            continue
        guess = guesses[i] if guesses is not None else RigidTransform3.identity()
        results.append(register(cloud, target, guess, reg_cfg))
    return results


def assemble_tree(
    base_to_ref: RigidTransform3,
    ref_to_sensors: list[RigidTransform3],
    base_frame: str = "base",
    reference_frame: str = "cam0",
    sensor_frames: list[str] | None = None,
) -> TransformTree:
    """Tree rooted at the robot base; other cameras hang off the reference."""
    if sensor_frames is None:
        sensor_frames = [f"cam{i + 1}" for i in range(len(ref_to_sensors))]
    if len(sensor_frames) != len(ref_to_sensors):
        raise ValidationFailure("one frame name per sensor offset required")
    edges = {reference_frame: (base_frame, base_to_ref)}
    for name, offset in zip(sensor_frames, ref_to_sensors):
        edges[name] = (reference_frame, offset)
    return TransformTree(root=base_frame, edges=edges)
