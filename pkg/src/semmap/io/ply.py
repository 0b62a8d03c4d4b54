"""ASCII PLY point-cloud reader/writer.

Supported vertex properties: x y z, optional red green blue (uchar),
optional nx ny nz. Binary PLY is out of scope.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..geometry import PointCloud
from ._text import Diagnostics, fmt

_FLOAT_TYPES = {"float", "float32", "double", "float64"}
_BYTE_TYPES = {"uchar", "uint8", "char", "int8"}
_KNOWN = ["x", "y", "z", "red", "green", "blue", "nx", "ny", "nz"]


def read_ply(path) -> PointCloud:
    path = Path(path)
    diag = Diagnostics(str(path))
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        diag.fail(1, "missing 'ply' magic")
    n_vertices = None
    properties: list[str] = []
    in_vertex_element = False
    data_start = None
    for i, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                diag.fail(i, f"unsupported format {raw.strip()!r}")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                diag.fail(i, "malformed element line")
            in_vertex_element = tokens[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertices = int(tokens[2])
                except ValueError:
                    diag.fail(i, f"bad vertex count {tokens[2]!r}")
            elif tokens[1] != "vertex":
                diag.fail(i, f"unsupported element {tokens[1]!r}")
        elif tokens[0] == "property":
            if not in_vertex_element:
                diag.fail(i, "property outside vertex element")
            if len(tokens) != 3:
                diag.fail(i, "malformed property line")
            ptype, name = tokens[1], tokens[2]
            if name not in _KNOWN:
                diag.fail(i, f"unsupported property {name!r}")
            if name in ("red", "green", "blue") and ptype not in _BYTE_TYPES:
                diag.fail(i, f"color property {name!r} must be uchar")
            if name in ("x", "y", "z", "nx", "ny", "nz") and ptype not in _FLOAT_TYPES:
                diag.fail(i, f"property {name!r} must be float")
            properties.append(name)
        elif tokens[0] == "end_header":
            data_start = i
            break
        else:
            diag.fail(i, f"unexpected header token {tokens[0]!r}")
    if data_start is None:
        diag.fail(len(lines), "missing end_header")
    if n_vertices is None:
        diag.fail(data_start, "missing vertex element")
    for coord in ("x", "y", "z"):
        if coord not in properties:
            diag.fail(data_start, f"vertex element lacks property {coord!r}")
    has_color = all(c in properties for c in ("red", "green", "blue"))
    has_normals = all(c in properties for c in ("nx", "ny", "nz"))
    rows = []
    for i, raw in enumerate(lines[data_start:], start=data_start + 1):
        if not raw.strip():
            continue
        tokens = raw.split()
        if len(tokens) != len(properties):
            diag.fail(i, f"expected {len(properties)} values, got {len(tokens)}")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            diag.fail(i, f"non-numeric value in {raw.strip()!r}")
    if len(rows) != n_vertices:
        diag.fail(len(lines), f"declared {n_vertices} vertices, found {len(rows)}")
    data = np.array(rows, dtype=float).reshape(len(rows), len(properties))
    col = {name: data[:, j] for j, name in enumerate(properties)}
    points = np.column_stack([col["x"], col["y"], col["z"]]) if rows else np.zeros((0, 3))
    colors = None
    if has_color:
        colors = np.column_stack([col["red"], col["green"], col["blue"]]).astype(np.uint8)
    normals = None
    if has_normals:
        normals = np.column_stack([col["nx"], col["ny"], col["nz"]])
        norms = np.linalg.norm(normals, axis=1)
        fixable = norms > 1e-12
        normals[fixable] /= norms[fixable, None]
        normals[~fixable] = 0.0
    return PointCloud(points, colors, normals)


def write_ply(path, cloud: PointCloud) -> None:
    path = Path(path)
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    header += [f"property float {c}" for c in ("x", "y", "z")]
    if cloud.colors is not None:
        header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    if cloud.normals is not None:
        header += [f"property float {c}" for c in ("nx", "ny", "nz")]
    header.append("end_header")
    rows = []
    for i in range(len(cloud)):
        parts = [fmt(v) for v in cloud.points[i]]
        if cloud.colors is not None:
            parts += [str(int(v)) for v in cloud.colors[i]]
        if cloud.normals is not None:
            parts += [fmt(v) for v in cloud.normals[i]]
        rows.append(" ".join(parts))
    path.write_text("\n".join(header + rows) + "\n")
