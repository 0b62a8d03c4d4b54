"""3D map construction: local maps, pose graph, and its optimization.

Local maps grow by registering consecutive depth frames; a new one starts
when the motion since the map origin exceeds a trigger or the registration
reports failure. The pose graph connects local-map origins and is refined
by damped Gauss-Newton on a per-node 6-DoF parameterization with the first
node held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .errors import NumericalError, ValidationFailure
from .geometry import PointCloud, voxel_downsample
from .projection import scan_to_points, unproject
from .registration import RegistrationConfig, RegistrationResult, match_scans, register
from .transforms import RigidTransform3, se3_exp, se3_log

if TYPE_CHECKING:
    from .io.logs import AcquisitionLog


@dataclass(frozen=True)
class LocalMap:
    """Integrated point cloud in its own frame, anchored by a global pose."""

    id: str
    cloud: PointCloud
    origin_pose: RigidTransform3

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise ValidationFailure(f"local map {self.id!r} has an empty cloud")


@dataclass(frozen=True)
class PoseGraphNode:
    id: str
    pose: RigidTransform3
    local_map: LocalMap | None = None


@dataclass(frozen=True)
class PoseGraphEdge:
    """Relative constraint: measurement estimates pose of ``b`` in ``a``'s frame."""

    a: str
    b: str
    measurement: RigidTransform3
    information: np.ndarray = field(default_factory=lambda: np.eye(6))

    def __post_init__(self):
        info = np.asarray(self.information, dtype=float).reshape(6, 6)
        if not np.allclose(info, info.T, atol=1e-9):
            raise ValidationFailure("information matrix must be symmetric")
        if np.linalg.eigvalsh(info)[0] <= 0:
            raise ValidationFailure("information matrix must be positive-definite")
        info.flags.writeable = False
        object.__setattr__(self, "information", info)


@dataclass(frozen=True)
class PoseGraph:
    nodes: dict[str, PoseGraphNode]
    edges: tuple[PoseGraphEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        for e in self.edges:
            for end in (e.a, e.b):
                if end not in self.nodes:
                    raise ValidationFailure(f"edge endpoint {end!r} is not a node")

    def with_poses(self, poses: dict[str, RigidTransform3]) -> PoseGraph:
        nodes = {
            nid: replace(node, pose=poses.get(nid, node.pose))
            for nid, node in self.nodes.items()
        }
        return PoseGraph(nodes, self.edges)

    def with_edge(self, edge: PoseGraphEdge) -> PoseGraph:
        return PoseGraph(self.nodes, self.edges + (edge,))

    def components(self) -> list[set[str]]:
        remaining = set(self.nodes)
        neighbors: dict[str, set[str]] = {nid: set() for nid in self.nodes}
        for e in self.edges:
            neighbors[e.a].add(e.b)
            neighbors[e.b].add(e.a)
        out = []
        while remaining:
            seed = min(remaining)
            stack, comp = [seed], set()
            while stack:
                nid = stack.pop()
                if nid in comp:
                    continue
                comp.add(nid)
                stack.extend(neighbors[nid] - comp)
            out.append(comp)
            remaining -= comp
        return out


@dataclass(frozen=True)
class BuilderConfig:
    trans_trigger: float = 1.0  # meters of motion from the local-map origin
    rot_trigger: float = 0.5  # radians
    voxel_size: float = 0.02  # meters

    def __post_init__(self):
        if min(self.trans_trigger, self.rot_trigger, self.voxel_size) <= 0:
            raise ValidationFailure("builder config values must be positive")


def edge_error(edge: PoseGraphEdge, pose_a: RigidTransform3, pose_b: RigidTransform3) -> np.ndarray:
    return se3_log(edge.measurement.inverse().compose(pose_a.inverse()).compose(pose_b))


def chi2(graph: PoseGraph) -> float:
    total = 0.0
    for e in graph.edges:
        err = edge_error(e, graph.nodes[e.a].pose, graph.nodes[e.b].pose)
        total += float(err @ e.information @ err)
    return total


def _numeric_jacobians(edge: PoseGraphEdge, pose_a, pose_b, h: float = 1e-6):
    """d error / d (right perturbation) for both endpoints, by central differences."""
    ja = np.zeros((6, 6))
    jb = np.zeros((6, 6))
    for k in range(6):
        delta = np.zeros(6)
        delta[k] = h
        plus = se3_exp(delta)
        minus = se3_exp(-delta)
        ja[:, k] = (
            edge_error(edge, pose_a.compose(plus), pose_b)
            - edge_error(edge, pose_a.compose(minus), pose_b)
        ) / (2 * h)
        jb[:, k] = (
            edge_error(edge, pose_a, pose_b.compose(plus))
            - edge_error(edge, pose_a, pose_b.compose(minus))
        ) / (2 * h)
    return ja, jb


def optimize(graph: PoseGraph, max_iter: int = 50,
             fixed: str | None = None) -> PoseGraph:
    """Minimize the weighted squared edge errors over the node poses.

    The first node (or ``fixed``) anchors the gauge. Chi-squared never
    increases across accepted iterations; rejected steps raise the damping.
    """
    comps = graph.components()
    if len(comps) > 1:
        named = "; ".join("{" + ", ".join(sorted(c)) + "}" for c in comps)
        raise ValidationFailure(f"pose graph is disconnected: components {named}")
    if not graph.edges:
        return graph
    node_ids = list(graph.nodes)
    if fixed is None:
        fixed = node_ids[0]
    if fixed not in graph.nodes:
        raise ValidationFailure(f"fixed node {fixed!r} is not in the graph")
    free = [nid for nid in node_ids if nid != fixed]
    index = {nid: i for i, nid in enumerate(free)}
    poses = {nid: graph.nodes[nid].pose for nid in node_ids}
    best_chi2 = chi2(graph.with_poses(poses))
    damping = 0.0
    for _ in range(max_iter):
        n = 6 * len(free)
        if n == 0:
            break
        h_mat = np.zeros((n, n))
        b_vec = np.zeros(n)
        for e in graph.edges:
            pa, pb = poses[e.a], poses[e.b]
            err = edge_error(e, pa, pb)
            ja, jb = _numeric_jacobians(e, pa, pb)
            blocks = []
            if e.a in index:
                blocks.append((index[e.a], ja))
            if e.b in index:
                blocks.append((index[e.b], jb))
            for i, ji in blocks:
                b_vec[6 * i:6 * i + 6] += ji.T @ e.information @ err
                for j, jj in blocks:
                    h_mat[6 * i:6 * i + 6, 6 * j:6 * j + 6] += ji.T @ e.information @ jj
        try:
            delta = np.linalg.solve(h_mat + max(damping, 1e-12) * np.eye(n), -b_vec)
        except np.linalg.LinAlgError:
            damping = max(damping * 10.0, 1e-6)
            continue
        candidate = dict(poses)
        for nid, i in index.items():
            candidate[nid] = poses[nid].compose(se3_exp(delta[6 * i:6 * i + 6]))
        new_chi2 = chi2(graph.with_poses(candidate))
        if new_chi2 <= best_chi2 + 1e-15:
            poses = candidate
            best_chi2 = new_chi2
            damping /= 10.0
            if np.linalg.norm(delta) < 1e-10:
                break
        else:
            damping = max(damping * 10.0, 1e-6)
            if damping > 1e12:
                break
    return graph.with_poses(poses)


def add_manual_edge(graph: PoseGraph, a: str, b: str,
                    guess: RigidTransform3 = RigidTransform3.identity(),
                    reg_cfg: RegistrationConfig = RegistrationConfig(),
                    ) -> tuple[PoseGraph, RegistrationResult]:
    """Register local map ``b`` against ``a`` and append the edge on success.

    ``guess`` is the initial estimate of b's pose in a's frame. On failure the
    graph is returned unchanged along with the rejection diagnostics.
    """
    if a == b:
        raise ValidationFailure("manual edge endpoints must differ")
    for nid in (a, b):
        if nid not in graph.nodes:
            raise ValidationFailure(f"unknown node id {nid!r}")
        if graph.nodes[nid].local_map is None:
            raise ValidationFailure(f"node {nid!r} carries no local map cloud")
    cloud_a = graph.nodes[a].local_map.cloud
    cloud_b = graph.nodes[b].local_map.cloud
    result = register(cloud_b, cloud_a, guess, reg_cfg)
    if not result.converged:
        return graph, result
    inliers = max(1.0, result.inlier_fraction * len(cloud_b))
    edge = PoseGraphEdge(a, b, result.transform, np.eye(6) * inliers)
    return graph.with_edge(edge), result


def export_global_cloud(maps: list[LocalMap], graph: PoseGraph,
                        voxel_size: float = 0.02) -> PointCloud:
    """All local clouds in the global frame, merged and voxel-downsampled."""
    merged: PointCloud | None = None
    for lm in maps:
        pose = graph.nodes[lm.id].pose if lm.id in graph.nodes else lm.origin_pose
        moved = lm.cloud.transformed(pose)
        merged = moved if merged is None else merged.concatenated(moved)
    if merged is None:
        return PointCloud()
    return voxel_downsample(merged, voxel_size)


@dataclass
class _BuilderState:
    maps: list[LocalMap]
    nodes: dict[str, PoseGraphNode]
    edges: list[PoseGraphEdge]
    cloud: PointCloud | None = None  # current local map accumulation
    origin: RigidTransform3 = RigidTransform3.identity()  # global pose of it
    last_in_map: RigidTransform3 = RigidTransform3.identity()

    def map_id(self) -> str:
        return f"lm{len(self.maps):04d}"

    def close_map(self):
        lm = LocalMap(self.map_id(), self.cloud, self.origin)
        self.maps.append(lm)
        self.nodes[lm.id] = PoseGraphNode(lm.id, lm.origin_pose, lm)

    def start_map(self, cloud: PointCloud, relative: RigidTransform3, inliers: float):
        previous_id = self.map_id()
        self.close_map()
        new_origin = self.origin.compose(relative)
        self.edges.append(
            PoseGraphEdge(previous_id, self.map_id(), relative, np.eye(6) * max(1.0, inliers))
        )
        self.cloud = cloud
        self.origin = new_origin
        self.last_in_map = RigidTransform3.identity()


def build_local_maps(log: AcquisitionLog, cfg: BuilderConfig = BuilderConfig(),
                     reg_cfg: RegistrationConfig = RegistrationConfig(),
                     sensor_offset: RigidTransform3 = RigidTransform3.identity(),
                     ) -> tuple[list[LocalMap], PoseGraph]:
    """Segment an acquisition log into registered local maps plus their graph.

    Registration guesses come from odometry when available, otherwise from
    the 2D scan matcher on the laser stream, otherwise identity.
    ``sensor_offset`` maps camera-frame data into the odometry body frame.
    """
    frames = log.depth_frames()
    if not frames:
        raise ValidationFailure("log contains no depth frames")
    has_odom = bool(log.odometry())
    has_laser = bool(log.lasers())

    def camera_pose_from_odom(stamp: float) -> RigidTransform3 | None:
        rec = log.nearest_odometry(stamp)
        return None if rec is None else rec.pose.compose(sensor_offset)

    def scan_points(stamp: float) -> np.ndarray | None:
        rec = log.nearest_laser(stamp)
        return None if rec is None else scan_to_points(rec.ranges, rec.config)

    state = _BuilderState(maps=[], nodes={}, edges=[])
    prev_stamp = None
    for i, frame in enumerate(frames):
        depth = log.load_depth(frame)
        intrinsics = log.cameras[frame.sensor_id]
        cloud = voxel_downsample(
            unproject(depth, intrinsics), cfg.voxel_size
        )
        if len(cloud) == 0:
            continue
        if state.cloud is None:
            start = camera_pose_from_odom(frame.stamp) if has_odom else None
            state.cloud = cloud
            state.origin = start if start is not None else RigidTransform3.identity()
            prev_stamp = frame.stamp
            continue
        delta_guess = RigidTransform3.identity()
        if has_odom:
            pose_prev = camera_pose_from_odom(prev_stamp)
            pose_cur = camera_pose_from_odom(frame.stamp)
            if pose_prev is not None and pose_cur is not None:
                delta_guess = pose_prev.inverse().compose(pose_cur)
        elif has_laser:
            prev_scan = scan_points(prev_stamp)
            cur_scan = scan_points(frame.stamp)
            if prev_scan is not None and cur_scan is not None and len(prev_scan) and len(cur_scan):
                scan_result = match_scans(cur_scan, prev_scan, cfg=reg_cfg)
                if scan_result.converged or scan_result.inlier_fraction > 0:
                    delta_guess = scan_result.transform
        guess_in_map = state.last_in_map.compose(delta_guess)
        result = register(cloud, state.cloud, guess_in_map, reg_cfg)
        if not result.converged:
            if i == 1 and not has_odom and not has_laser:
                raise NumericalError(
                    "registration failed on the first frame pair and the log "
                    "carries neither odometry nor laser data to recover from"
                )
            state.start_map(cloud, guess_in_map, inliers=1.0)
        else:
            pose_in_map = result.transform
            moved_too_far = (
                np.linalg.norm(pose_in_map.t) > cfg.trans_trigger
                or pose_in_map.rotation_angle() > cfg.rot_trigger
            )
            if moved_too_far:
                state.start_map(
                    cloud, pose_in_map, inliers=result.inlier_fraction * len(cloud)
                )
            else:
                state.cloud = voxel_downsample(
                    state.cloud.concatenated(cloud.transformed(pose_in_map)),
                    cfg.voxel_size,
                )
                state.last_in_map = pose_in_map
        prev_stamp = frame.stamp
    if state.cloud is not None:
        state.close_map()
    graph = PoseGraph(state.nodes, tuple(state.edges))
    return state.maps, graph
