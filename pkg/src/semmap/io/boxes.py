"""Bounding-box annotation format (.ann).

One box per line: id class individual cx cy cz hx hy hz qx qy qz qw.
'#' starts a comment.
"""

from __future__ import annotations

from pathlib import Path

from ..errors import ValidationFailure
from ..geometry import BoundingBox
from ._text import Diagnostics, fmt, parse_floats


def read_boxes(path) -> list[BoundingBox]:
    path = Path(path)
    diag = Diagnostics(str(path))
    boxes: list[BoundingBox] = []
    seen_ids: set[str] = set()
    for i, raw in enumerate(path.read_text().splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) != 13:
            diag.fail(i, f"expected 13 fields, got {len(tokens)}")
        box_id, class_name, individual = tokens[:3]
        if box_id in seen_ids:
            diag.fail(i, f"duplicate box id {box_id!r}")
        seen_ids.add(box_id)
        numbers = parse_floats(tokens[3:], 10, diag, i)
        try:
            boxes.append(
                BoundingBox.make(
                    id=box_id,
                    center=numbers[0:3],
                    half_extents=numbers[3:6],
                    quat_xyzw=numbers[6:10],
                    individual=individual,
                    class_name=class_name,
                )
            )
        except ValidationFailure as err:
            diag.fail(i, str(err))
    return boxes


def write_boxes(path, boxes: list[BoundingBox]) -> None:
    lines = []
    for b in boxes:
        parts = [b.id, b.class_name, b.individual]
        parts += [fmt(v) for v in b.center]
        parts += [fmt(v) for v in b.half_extents]
        parts += [fmt(v) for v in b.orientation.q]
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
