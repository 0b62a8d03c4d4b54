"""Calibration artifact files: transform trees and depth distortion models.

Tree file: one line per edge, `child parent tx ty tz qx qy qz qw`; the root
is the one parent that never appears as a child. Distortion model file: a
header followed by one grid row per line, level blocks in order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..calibration import DepthDistortionModel
from ..errors import ValidationFailure
from ..transforms import RigidTransform3, TransformTree
from ._text import Diagnostics, fmt, parse_floats


def write_tree(path, tree: TransformTree) -> None:
    lines = []
    for child, (parent, offset) in tree.edges.items():
        xyzq = " ".join(fmt(v) for v in offset.to_xyzq())
        lines.append(f"{child} {parent} {xyzq}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_tree(path) -> TransformTree:
    path = Path(path)
    diag = Diagnostics(str(path))
    edges: dict[str, tuple[str, RigidTransform3]] = {}
    for i, raw in enumerate(path.read_text().splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) != 9:
            diag.fail(i, f"expected 9 fields, got {len(tokens)}")
        child, parent = tokens[0], tokens[1]
        if child in edges:
            diag.fail(i, f"duplicate child frame {child!r}")
        values = parse_floats(tokens[2:], 7, diag, i)
        edges[child] = (parent, RigidTransform3.from_xyzq(values))
    parents = {parent for parent, _ in edges.values()}
    roots = parents - set(edges)
    if len(roots) != 1:
        diag.fail(None, f"expected exactly one root frame, found {sorted(roots)}")
    try:
        return TransformTree(root=roots.pop(), edges=edges)
    except ValidationFailure as err:
        diag.fail(None, str(err))


def write_distortion_model(path, model: DepthDistortionModel) -> None:
    lines = [
        f"DISTORTION {model.width} {model.height} {model.grid_w} {model.grid_h} "
        f"{len(model.levels)}",
        "LEVELS " + " ".join(fmt(v) for v in model.levels),
    ]
    for level_grid in model.multipliers:
        for row in level_grid:
            lines.append(" ".join(fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_distortion_model(path) -> DepthDistortionModel:
    path = Path(path)
    diag = Diagnostics(str(path))
    lines = [
        (i, raw.split("#", 1)[0].strip())
        for i, raw in enumerate(path.read_text().splitlines(), start=1)
    ]
    lines = [(i, s) for i, s in lines if s]
    if not lines or not lines[0][1].startswith("DISTORTION"):
        diag.fail(1, "missing DISTORTION header")
    header = lines[0][1].split()
    if len(header) != 6:
        diag.fail(lines[0][0], "DISTORTION header needs 5 values")
    width, height, grid_w, grid_h, n_levels = (int(v) for v in header[1:])
    if len(lines) < 2 or not lines[1][1].startswith("LEVELS"):
        diag.fail(lines[0][0], "missing LEVELS line")
    levels = parse_floats(lines[1][1].split()[1:], n_levels, diag, lines[1][0])
    rows = lines[2:]
    if len(rows) != n_levels * grid_h:
        diag.fail(None, f"expected {n_levels * grid_h} grid rows, found {len(rows)}")
    grid = np.ones((n_levels, grid_h, grid_w))
    for j, (line_no, content) in enumerate(rows):
        values = parse_floats(content.split(), grid_w, diag, line_no)
        grid[j // grid_h, j % grid_h, :] = values
    try:
        return DepthDistortionModel(
            width=width, height=height, grid_w=grid_w, grid_h=grid_h,
            levels=tuple(levels), multipliers=grid,
        )
    except ValidationFailure as err:
        diag.fail(None, str(err))
