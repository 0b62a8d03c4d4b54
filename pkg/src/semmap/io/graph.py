"""Pose-graph text format (.pg).

    NODE id x y z qx qy qz qw cloudfile
    EDGE a b x y z qx qy qz qw i11 i12 ... i66   (21 upper-triangular values)

Cloud files are PLYs relative to the graph file; '-' marks a node without
one. The information matrix is stored row-major upper-triangular.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ValidationFailure
from ..geometry import PointCloud
from ..mapping import LocalMap, PoseGraph, PoseGraphEdge, PoseGraphNode
from ..transforms import RigidTransform3
from ._text import Diagnostics, fmt, parse_floats
from .ply import read_ply, write_ply

_TRIU = np.triu_indices(6)


def read_graph(path, load_clouds: bool = True) -> PoseGraph:
    path = Path(path)
    diag = Diagnostics(str(path))
    nodes: dict[str, PoseGraphNode] = {}
    edges: list[PoseGraphEdge] = []
    edge_lines: list[tuple[int, str, str, RigidTransform3, np.ndarray]] = []
    for i, raw in enumerate(path.read_text().splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if tokens[0] == "NODE":
            if len(tokens) != 10:
                diag.fail(i, f"NODE needs 10 fields, got {len(tokens)}")
            node_id = tokens[1]
            if node_id in nodes:
                diag.fail(i, f"duplicate node id {node_id!r}")
            values = parse_floats(tokens[2:9], 7, diag, i)
            pose = RigidTransform3.from_xyzq(values)
            cloud_ref = tokens[9]
            local_map = None
            if cloud_ref != "-" and load_clouds:
                cloud_path = path.parent / cloud_ref
                if not cloud_path.exists():
                    diag.fail(i, f"cloud file {cloud_ref!r} not found")
                local_map = LocalMap(node_id, read_ply(cloud_path), pose)
            nodes[node_id] = PoseGraphNode(node_id, pose, local_map)
        elif tokens[0] == "EDGE":
            if len(tokens) != 31:
                diag.fail(i, f"EDGE needs 31 fields, got {len(tokens)}")
            values = parse_floats(tokens[3:], 28, diag, i)
            info = np.zeros((6, 6))
            info[_TRIU] = values[7:]
            info = info + np.triu(info, 1).T
            edge_lines.append(
                (i, tokens[1], tokens[2], RigidTransform3.from_xyzq(values[:7]), info)
            )
        else:
            diag.fail(i, f"unknown record {tokens[0]!r}")
    for i, a, b, measurement, info in edge_lines:
        if a not in nodes or b not in nodes:
            missing = a if a not in nodes else b
            diag.fail(i, f"edge endpoint {missing!r} has no NODE record")
        try:
            edges.append(PoseGraphEdge(a, b, measurement, info))
        except ValidationFailure as err:
            diag.fail(i, str(err))
    return PoseGraph(nodes, tuple(edges))


def write_graph(path, graph: PoseGraph, cloud_dir: str = "clouds") -> None:
    """Write the graph and its node clouds (into ``cloud_dir`` next to it)."""
    path = Path(path)
    lines = []
    for node_id, node in graph.nodes.items():
        if node.local_map is not None:
            rel = f"{cloud_dir}/{node_id}.ply"
            target = path.parent / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            write_ply(target, node.local_map.cloud)
        else:
            rel = "-"
        xyzq = " ".join(fmt(v) for v in node.pose.to_xyzq())
        lines.append(f"NODE {node_id} {xyzq} {rel}")
    for e in graph.edges:
        xyzq = " ".join(fmt(v) for v in e.measurement.to_xyzq())
        upper = " ".join(fmt(v) for v in e.information[_TRIU])
        lines.append(f"EDGE {e.a} {e.b} {xyzq} {upper}")
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
