"""Sensor simulation from map geometry: depth/RGB images and 2D range scans.

Rendering is point-splat z-buffering over the raw cloud; the laser is a
slab filter plus bearing binning. Poses passed to the render functions are
sensor poses expressed in the cloud's frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationFailure
from .geometry import PointCloud
from .transforms import RigidTransform3


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.3
    far: float = 10.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationFailure("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValidationFailure("require 0 < near < far")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationFailure("principal point must lie inside the image")


# conventional RGB-D defaults (VGA); not tied to any particular device log
DEFAULT_INTRINSICS = PinholeIntrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)


@dataclass(frozen=True)
class DepthImage:
    """Row-major depth in meters; zero marks pixels with no return."""

    width: int
    height: int
    depth: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=float).reshape(self.height, self.width)
        object.__setattr__(self, "depth", depth)

    @classmethod
    def zeros(cls, k: PinholeIntrinsics) -> DepthImage:
        return cls(k.width, k.height, np.zeros((k.height, k.width)))


@dataclass(frozen=True)
class LaserConfig:
    angle_min: float = -np.pi
    angle_max: float = np.pi
    n_beams: int = 360
    max_range: float = 10.0
    slab_half_height: float = 0.05

    def __post_init__(self):
        if self.angle_min >= self.angle_max:
            raise ValidationFailure("angle_min must be below angle_max")
        if self.n_beams < 2:
            raise ValidationFailure("need at least 2 beams")

    def beam_angles(self) -> np.ndarray:
        """Bin-center bearings, one per beam."""
        width = (self.angle_max - self.angle_min) / self.n_beams
        return self.angle_min + (np.arange(self.n_beams) + 0.5) * width


def _camera_frame_points(cloud: PointCloud, pose: RigidTransform3):
    to_sensor = pose.inverse()
    pts = to_sensor.apply(cloud.points) if len(cloud) else cloud.points
    return pts


def _project(pts: np.ndarray, k: PinholeIntrinsics):
    """Pixel coordinates and the validity mask for camera-frame points."""
    z = pts[:, 2]
    valid = (z >= k.near) & (z <= k.far)
    u = np.full(len(pts), -1, dtype=int)
    v = np.full(len(pts), -1, dtype=int)
    zs = z[valid]
    u[valid] = np.rint(k.fx * pts[valid, 0] / zs + k.cx).astype(int)
    v[valid] = np.rint(k.fy * pts[valid, 1] / zs + k.cy).astype(int)
    valid &= (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    return u, v, z, valid


def _zbuffer(u, v, z, valid, k: PinholeIntrinsics, splat_px: int):
    """Minimum depth per pixel; returns (depth image array, winner index array).

    splat_px = 1 writes single pixels; larger values stamp a
    (2*splat_px - 1)^2 square so sparse clouds still cover the image.
    """
    if splat_px < 1:
        raise ValidationFailure("splat_px must be >= 1")
    r = splat_px - 1
    idx = np.nonzero(valid)[0]
    pixels, depths, sources = [], [], []
    for du in range(-r, r + 1):
        for dv in range(-r, r + 1):
            uu = u[idx] + du
            vv = v[idx] + dv
            ok = (uu >= 0) & (uu < k.width) & (vv >= 0) & (vv < k.height)
            pixels.append(vv[ok] * k.width + uu[ok])
            depths.append(z[idx[ok]])
            sources.append(idx[ok])
    depth_flat = np.zeros(k.height * k.width)
    winner_flat = np.full(k.height * k.width, -1, dtype=np.int64)
    pix = np.concatenate(pixels) if pixels else np.empty(0, dtype=int)
    if len(pix):
        zs = np.concatenate(depths)
        ids = np.concatenate(sources)
        # per pixel keep the smallest depth; source index breaks exact ties
        order = np.lexsort((ids, zs, pix))
        pix, zs, ids = pix[order], zs[order], ids[order]
        first = np.concatenate([[True], pix[1:] != pix[:-1]])
        depth_flat[pix[first]] = zs[first]
        winner_flat[pix[first]] = ids[first]
    return depth_flat.reshape(k.height, k.width), winner_flat.reshape(k.height, k.width)


def render_depth(cloud: PointCloud, pose: RigidTransform3, k: PinholeIntrinsics,
                 splat_px: int = 1) -> DepthImage:
    """Z-buffered point-splat depth render of the cloud seen from ``pose``."""
    pts = _camera_frame_points(cloud, pose)
    if len(pts) == 0:
        return DepthImage.zeros(k)
    u, v, z, valid = _project(pts, k)
    depth, _ = _zbuffer(u, v, z, valid, k, splat_px)
    return DepthImage(k.width, k.height, depth)


def render_rgb(cloud: PointCloud, pose: RigidTransform3, k: PinholeIntrinsics,
               splat_px: int = 1) -> np.ndarray:
    """Color of the nearest splat per pixel; black background. (H, W, 3) uint8."""
    if cloud.colors is None:
        raise ValidationFailure("render_rgb requires a cloud with colors")
    image = np.zeros((k.height, k.width, 3), dtype=np.uint8)
    pts = _camera_frame_points(cloud, pose)
    if len(pts) == 0:
        return image
    u, v, z, valid = _project(pts, k)
    _, winner = _zbuffer(u, v, z, valid, k, splat_px)
    hit = winner >= 0
    image[hit] = cloud.colors[winner[hit]]
    return image


def render_scan(cloud: PointCloud, pose: RigidTransform3, cfg: LaserConfig) -> np.ndarray:
    """Per-beam minimum planar range; beams with no return hold max_range."""
    ranges = np.full(cfg.n_beams, cfg.max_range)
    if len(cloud) == 0:
        return ranges
    pts = _camera_frame_points(cloud, pose)
    in_slab = np.abs(pts[:, 2]) <= cfg.slab_half_height
    pts = pts[in_slab]
    if len(pts) == 0:
        return ranges
    planar = np.linalg.norm(pts[:, :2], axis=1)
    keep = (planar > 1e-9) & (planar <= cfg.max_range)
    pts, planar = pts[keep], planar[keep]
    bearing = np.arctan2(pts[:, 1], pts[:, 0])
    span = cfg.angle_max - cfg.angle_min
    in_fov = (bearing >= cfg.angle_min) & (bearing <= cfg.angle_max)
    bins = np.floor((bearing[in_fov] - cfg.angle_min) / span * cfg.n_beams).astype(int)
    bins = np.minimum(bins, cfg.n_beams - 1)  # angle_max falls in the last bin
    np.minimum.at(ranges, bins, planar[in_fov])
    return ranges


def scan_to_points(ranges: np.ndarray, cfg: LaserConfig) -> np.ndarray:
    """2D points at the bin-center bearings, dropping no-return beams."""
    ranges = np.asarray(ranges, dtype=float)
    angles = cfg.beam_angles()
    hit = ranges < cfg.max_range - 1e-9
    return np.column_stack(
        [ranges[hit] * np.cos(angles[hit]), ranges[hit] * np.sin(angles[hit])]
    )


def unproject(img: DepthImage, k: PinholeIntrinsics,
              pose: RigidTransform3 = RigidTransform3.identity()) -> PointCloud:
    """Back-project nonzero pixels to 3D, then map by the sensor pose."""
    v, u = np.nonzero(img.depth > 0)
    z = img.depth[v, u]
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    pts = np.column_stack([x, y, z])
    if not pose.is_identity():
        pts = pose.apply(pts) if len(pts) else pts
    return PointCloud(pts)
