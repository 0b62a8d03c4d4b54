"""Dataset directory layout and the map/boxes/KB fusion step.

A ground-truth dataset directory holds:

    meta          key=value manifest (format=1, frame=..., ...)
    map.ply       global point cloud in the dataset frame
    graph.pg      pose graph (+ clouds/<node>.ply local maps)
    boxes.ann     bounding-box annotations
    ontology.kb   knowledge base (pre-fusion)
    semantic.kb   fused knowledge base written by the fuse step (derived)

Fusion asserts the spatial abstraction of every box into the knowledge base
and lifts in-box cloud points into semantically relevant elements.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from filelock import FileLock

from ..errors import FormatError, ValidationFailure
from ..evaluation import POSITION_PREDICATE, SHAPE_PREDICATE, SIZE_PREDICATE
from ..geometry import BoundingBox, GeometricElement, GeometricSet, PointCloud
from ..kb import Atom, KnowledgeBase
from ..mapping import PoseGraph
from ..semantic_map import SemanticMap
from ..transforms import ReferenceFrame
from . import FORMAT_VERSION
from .boxes import read_boxes, write_boxes
from .graph import read_graph, write_graph
from .kbfile import read_kb, write_kb
from .ply import read_ply, write_ply

META_FILE = "meta"
MAP_FILE = "map.ply"
GRAPH_FILE = "graph.pg"
BOXES_FILE = "boxes.ann"
ONTOLOGY_FILE = "ontology.kb"
SEMANTIC_KB_FILE = "semantic.kb"


def read_meta(root: Path) -> dict[str, str]:
    meta_path = Path(root) / META_FILE
    if not meta_path.exists():
        return {}
    meta = {}
    for i, raw in enumerate(meta_path.read_text().splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise FormatError(f"{meta_path}: line {i}: expected key=value")
        key, value = stripped.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def write_meta(root: Path, meta: dict[str, str]) -> None:
    lines = [f"{key}={value}" for key, value in sorted(meta.items())]
    (Path(root) / META_FILE).write_text("\n".join(lines) + "\n")


def writer_lock(root) -> FileLock:
    """Advisory lock serializing writers of one dataset directory."""
    return FileLock(str(Path(root) / ".lock"))


@dataclass
class Dataset:
    """In-memory view of a dataset directory; missing pieces stay None."""

    root: Path
    meta: dict[str, str]
    cloud: PointCloud | None = None
    graph: PoseGraph | None = None
    boxes: list[BoundingBox] | None = None
    kb: KnowledgeBase | None = None

    def frame_name(self) -> str:
        return self.meta.get("frame", "map")


def load_dataset(root, load_clouds: bool = True) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise FormatError(f"{root}: not a dataset directory")
    meta = read_meta(root)
    if meta and meta.get("format", FORMAT_VERSION) != FORMAT_VERSION:
        raise FormatError(f"{root}: unsupported format={meta.get('format')!r}")
    dataset = Dataset(root=root, meta=meta)
    if (root / MAP_FILE).exists():
        dataset.cloud = read_ply(root / MAP_FILE)
    if (root / GRAPH_FILE).exists():
        dataset.graph = read_graph(root / GRAPH_FILE, load_clouds=load_clouds)
    if (root / BOXES_FILE).exists():
        dataset.boxes = read_boxes(root / BOXES_FILE)
    if (root / ONTOLOGY_FILE).exists():
        dataset.kb = read_kb(root / ONTOLOGY_FILE)
    return dataset


def save_dataset(dataset: Dataset) -> None:
    root = Path(dataset.root)
    root.mkdir(parents=True, exist_ok=True)
    meta = dict(dataset.meta)
    meta.setdefault("format", FORMAT_VERSION)
    write_meta(root, meta)
    if dataset.cloud is not None:
        write_ply(root / MAP_FILE, dataset.cloud)
    if dataset.graph is not None:
        write_graph(root / GRAPH_FILE, dataset.graph)
    if dataset.boxes is not None:
        write_boxes(root / BOXES_FILE, dataset.boxes)
    if dataset.kb is not None:
        write_kb(root / ONTOLOGY_FILE, dataset.kb)


def fuse(map_cloud: PointCloud, boxes: list[BoundingBox], kb: KnowledgeBase,
         frame_name: str = "map") -> SemanticMap:
    """Combine the cloud, the box annotations, and the knowledge base.

    Every box contributes its position/size/shape atoms to P_s, and the
    cloud points it contains become semantically relevant elements linked to
    its individual. A point claimed by several boxes goes to the first box
    in id order.
    """
    for box in boxes:
        if box.individual not in kb.individuals:
            raise ValidationFailure(
                f"box {box.id!r} references undeclared individual {box.individual!r}"
            )
    new_atoms: set[Atom] = set()
    elements: list[GeometricElement] = []
    claimed = np.zeros(len(map_cloud), dtype=bool)
    for box in sorted(boxes, key=lambda b: b.id):
        new_atoms.add(Atom(POSITION_PREDICATE, (box.individual, *map(float, box.center))))
        new_atoms.add(Atom(SIZE_PREDICATE, (box.individual, *map(float, box.half_extents))))
        new_atoms.add(Atom(SHAPE_PREDICATE, (box.individual, "box")))
        if len(map_cloud):
            inside = box.contains(map_cloud.points) & ~claimed
            claimed |= inside
            for idx in np.nonzero(inside)[0]:
                elements.append(
                    GeometricElement.make_point(
                        f"m{idx:06d}", map_cloud.points[idx], individual=box.individual
                    )
                )
    fused_kb = KnowledgeBase(
        classes=kb.classes,
        individuals=kb.individuals,
        atoms=kb.atoms | new_atoms,
        function_like=kb.function_like | {POSITION_PREDICATE, SIZE_PREDICATE, SHAPE_PREDICATE},
        spatial_predicates=kb.spatial_predicates
        | {POSITION_PREDICATE, SIZE_PREDICATE, SHAPE_PREDICATE},
        connects_roles=kb.connects_roles,
    )
    geometry = GeometricSet(tuple(elements), frozenset(e.id for e in elements))
    return SemanticMap(
        frame=ReferenceFrame(frame_name),
        geometry=geometry,
        cloud=map_cloud,
        kb=fused_kb,
    )


def load_semantic_map(root) -> SemanticMap:
    """Load a dataset directory and fuse it into a semantic map."""
    dataset = load_dataset(root, load_clouds=False)
    missing = [
        name
        for name, piece in [
            (MAP_FILE, dataset.cloud),
            (BOXES_FILE, dataset.boxes),
            (ONTOLOGY_FILE, dataset.kb),
        ]
        if piece is None
    ]
    if missing:
        raise FormatError(f"{dataset.root}: dataset lacks {', '.join(missing)}")
    return fuse(dataset.cloud, dataset.boxes, dataset.kb, dataset.frame_name())
