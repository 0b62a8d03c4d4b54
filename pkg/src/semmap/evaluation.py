"""Map-against-ground-truth comparison.

Three ingredients: a geometric difference summed over corresponding
elements, a logical difference returning the atoms to add (delta) and to
remove (gamma) so the candidate entails the ground truth, and a spatial
distance over the abstracted bounding volumes. A configurable weighted sum
folds the component vector into one scalar.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationFailure
from .geometry import LINE, PLANE, POINT, BoundingBox, GeometricElement, GeometricSet
from .kb import Atom, KnowledgeBase, closure, core
from .semantic_map import SemanticMap
from .transforms import RigidTransform3

DEFAULT_MATCH_GATE = 0.5  # meters

POSITION_PREDICATE = "hasPosition"
SIZE_PREDICATE = "hasSize"
SHAPE_PREDICATE = "hasShape"
SPATIAL_PREDICATES = frozenset({POSITION_PREDICATE, SIZE_PREDICATE, SHAPE_PREDICATE})


@dataclass(frozen=True)
class CorrespondenceSet:
    """Pairing between two element stores plus the leftovers on each side."""

    pairs: tuple[tuple[str, str], ...]
    unmatched_1: tuple[str, ...]
    unmatched_gt: tuple[str, ...]


@dataclass(frozen=True)
class SemanticDiff:
    delta: frozenset[Atom]  # missing: add these to reach the ground truth
    gamma: frozenset[Atom]  # spurious: remove these first

    def __post_init__(self):
        if self.delta & self.gamma:
            raise ValidationFailure("delta and gamma must be disjoint")


@dataclass(frozen=True)
class EvaluationWeights:
    w_g: float = 1.0  # geometric error
    w_s: float = 1.0  # semantic diff cardinality
    w_d: float = 1.0  # spatial predicate distance
    w_u: float = 1.0  # unmatched element / box counts

    def __post_init__(self):
        values = (self.w_g, self.w_s, self.w_d, self.w_u)
        if any(w < 0 for w in values):
            raise ValidationFailure("weights must be non-negative")
        if not any(w > 0 for w in values):
            raise ValidationFailure("at least one weight must be positive")


@dataclass(frozen=True)
class EvaluationReport:
    geometric_error: float
    delta_count: int
    gamma_count: int
    spatial_distance: float
    unmatched_1: int
    unmatched_gt: int
    scalar: float

    def as_dict(self) -> dict:
        return {
            "geometric_error": self.geometric_error,
            "delta_count": self.delta_count,
            "gamma_count": self.gamma_count,
            "spatial_distance": self.spatial_distance,
            "unmatched_1": self.unmatched_1,
            "unmatched_gt": self.unmatched_gt,
            "scalar": self.scalar,
        }


def combine(weights: EvaluationWeights, geometric_error, semantic_count,
            spatial_distance, unmatched_count) -> float:
    return (
        weights.w_g * geometric_error
        + weights.w_s * semantic_count
        + weights.w_d * spatial_distance
        + weights.w_u * unmatched_count
    )


def element_distance(a: GeometricElement, b: GeometricElement) -> float:
    """Symmetric distance in meters between two canonical primitives."""
    kinds = (a.kind, b.kind)
    if kinds == (POINT, POINT):
        return float(np.linalg.norm(a.point - b.point))
    if kinds == (POINT, LINE):
        return _point_line(a.point, b)
    if kinds == (LINE, POINT):
        return _point_line(b.point, a)
    if kinds == (POINT, PLANE):
        return _point_plane(a.point, b)
    if kinds == (PLANE, POINT):
        return _point_plane(b.point, a)
    if kinds == (LINE, LINE):
        return _line_line(a, b)
    if kinds == (LINE, PLANE):
        return _line_plane(a, b)
    if kinds == (PLANE, LINE):
        return _line_plane(b, a)
    return _plane_plane(a, b)


def _point_line(p: np.ndarray, line: GeometricElement) -> float:
    d = p - line.point
    return float(np.linalg.norm(d - np.dot(d, line.direction) * line.direction))


def _point_plane(p: np.ndarray, plane: GeometricElement) -> float:
    return float(abs(np.dot(plane.normal, p) - plane.offset))


_PARALLEL_TOL = 1e-9


def _line_line(a: GeometricElement, b: GeometricElement) -> float:
    cross = np.cross(a.direction, b.direction)
    cross_norm = np.linalg.norm(cross)
    offset = b.point - a.point
    if cross_norm < _PARALLEL_TOL:
        return float(np.linalg.norm(offset - np.dot(offset, a.direction) * a.direction))
    # common-perpendicular distance; zero when the lines intersect
    return float(abs(np.dot(offset, cross)) / cross_norm)


def _line_plane(line: GeometricElement, plane: GeometricElement) -> float:
    if abs(np.dot(line.direction, plane.normal)) > _PARALLEL_TOL:
        return 0.0  # non-parallel: the infinite line pierces the plane
    return _point_plane(line.point, plane)


def _plane_plane(a: GeometricElement, b: GeometricElement) -> float:
    dot = np.dot(a.normal, b.normal)
    if abs(abs(dot) - 1.0) > _PARALLEL_TOL:
        return 0.0  # non-parallel infinite planes intersect
    # canonical normals make anti-parallel planes impossible in practice,
    # but align signs defensively before differencing offsets
    offset_b = b.offset if dot > 0 else -b.offset
    return float(abs(a.offset - offset_b))


def match_elements(m1: GeometricSet, mgt: GeometricSet,
                   gate: float = DEFAULT_MATCH_GATE) -> CorrespondenceSet:
    """Pair shared ids exactly, then greedily match same-kind leftovers.

    Greedy matching walks candidate pairs by ascending distance and rejects
    anything above the gate. Ties break on id order, so the result is
    deterministic.
    """
    if gate <= 0:
        raise ValidationFailure("gate must be positive")
    ids_1 = {e.id: e for e in m1.elements}
    ids_gt = {e.id: e for e in mgt.elements}
    shared = sorted(set(ids_1) & set(ids_gt))
    pairs = [(i, i) for i in shared]
    rest_1 = [e for e in m1.elements if e.id not in ids_gt]
    rest_gt = [e for e in mgt.elements if e.id not in ids_1]

    candidates = _gated_candidates(rest_1, rest_gt, gate)
    candidates.sort()
    used_1: set[str] = set()
    used_gt: set[str] = set()
    for _, id1, idgt in candidates:
        if id1 in used_1 or idgt in used_gt:
            continue
        used_1.add(id1)
        used_gt.add(idgt)
        pairs.append((id1, idgt))
    unmatched_1 = tuple(e.id for e in rest_1 if e.id not in used_1)
    unmatched_gt = tuple(e.id for e in rest_gt if e.id not in used_gt)
    return CorrespondenceSet(tuple(pairs), unmatched_1, unmatched_gt)


def _gated_candidates(rest_1, rest_gt, gate: float) -> list[tuple[float, str, str]]:
    """All same-kind element pairs within the gate, as (distance, id1, idgt).

    Point-point pairs go through a KD-tree so dense clouds stay tractable;
    the handful of line/plane elements use direct enumeration.
    """
    from scipy.spatial import cKDTree

    candidates: list[tuple[float, str, str]] = []
    pts_1 = [e for e in rest_1 if e.kind == POINT]
    pts_gt = [e for e in rest_gt if e.kind == POINT]
    if pts_1 and pts_gt:
        tree = cKDTree(np.array([e.point for e in pts_gt]))
        neighbor_lists = tree.query_ball_point(
            np.array([e.point for e in pts_1]), r=gate
        )
        for e1, neighbors in zip(pts_1, neighbor_lists):
            for j in neighbors:
                egt = pts_gt[j]
                candidates.append(
                    (float(np.linalg.norm(e1.point - egt.point)), e1.id, egt.id)
                )
    for e1 in rest_1:
        if e1.kind == POINT:
            continue
        for egt in rest_gt:
            if egt.kind != e1.kind:
                continue
            d = element_distance(e1, egt)
            if d <= gate:
                candidates.append((d, e1.id, egt.id))
    return candidates


def geometric_diff(m1: GeometricSet, mgt: GeometricSet, corr: CorrespondenceSet) -> float:
    """Sum of element distances over the corresponding pairs."""
    by_id_1 = {e.id: e for e in m1.elements}
    by_id_gt = {e.id: e for e in mgt.elements}
    total = 0.0
    for id1, idgt in corr.pairs:
        total += element_distance(by_id_1[id1], by_id_gt[idgt])
    return total


def _check_signatures(p1: KnowledgeBase, pgt: KnowledgeBase) -> None:
    a1 = p1.predicate_arity()
    agt = pgt.predicate_arity()
    for pred in sorted(set(a1) & set(agt)):
        if a1[pred] != agt[pred]:
            raise ValidationFailure(
                f"predicate {pred!r} has arity {a1[pred]} in the candidate "
                f"but {agt[pred]} in the ground truth"
            )


def semantic_diff(p1: KnowledgeBase, pgt: KnowledgeBase) -> SemanticDiff:
    """Gamma = spurious core atoms of the candidate; delta = ground-truth
    core atoms still missing after the spurious ones are removed.

    Guarantee: closure((p1.atoms minus gamma) union delta) contains
    closure(pgt), i.e. the repaired candidate entails the ground truth.
    """
    _check_signatures(p1, pgt)
    gamma = core(p1) - closure(pgt)
    repaired = p1.without_atoms(gamma)
    merged_names = KnowledgeBase(
        classes=p1.classes | pgt.classes,
        individuals=p1.individuals | pgt.individuals,
        atoms=repaired.atoms,
    )
    delta = core(pgt) - closure(merged_names)
    return SemanticDiff(delta=frozenset(delta), gamma=frozenset(gamma))


def _strip_spatial(kb: KnowledgeBase, spatial: frozenset[str]) -> KnowledgeBase:
    return KnowledgeBase(
        classes=kb.classes,
        individuals=kb.individuals,
        atoms={a for a in kb.atoms if a.predicate not in spatial},
        function_like=kb.function_like,
        spatial_predicates=frozenset(),
        connects_roles=kb.connects_roles,
    )


def boxes_from_kb(kb: KnowledgeBase) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-individual (center, half_extents) recovered from spatial atoms.

    Only individuals carrying both a position and a size atom produce an
    entry; the shape atom is informational.
    """
    centers: dict[str, np.ndarray] = {}
    sizes: dict[str, np.ndarray] = {}
    for a in kb.atoms:
        if a.predicate == POSITION_PREDICATE and len(a.args) == 4:
            centers[a.args[0]] = np.array(a.args[1:4], dtype=float)
        elif a.predicate == SIZE_PREDICATE and len(a.args) == 4:
            sizes[a.args[0]] = np.array(a.args[1:4], dtype=float)
    return {ind: (centers[ind], sizes[ind]) for ind in centers if ind in sizes}


def refined_diff(
    p1: KnowledgeBase,
    pgt: KnowledgeBase,
    boxes1: list[BoundingBox],
    boxesgt: list[BoundingBox],
) -> tuple[SemanticDiff, float, int, int]:
    """Semantic diff over non-spatial atoms plus a metric distance over the
    spatial abstraction.

    Returns (diff, spatial_distance, unmatched boxes of the candidate,
    unmatched boxes of the ground truth). Boxes pair by individual name;
    one-sided individuals count as unmatched instead of contributing a
    distance.
    """
    for box, kb_side, side in [(b, p1, "candidate") for b in boxes1] + [
        (b, pgt, "ground truth") for b in boxesgt
    ]:
        if box.individual not in kb_side.individuals:
            raise ValidationFailure(
                f"{side} box {box.id!r} references undeclared individual {box.individual!r}"
            )
    spatial = p1.spatial_predicates | pgt.spatial_predicates | SPATIAL_PREDICATES
    diff = semantic_diff(_strip_spatial(p1, spatial), _strip_spatial(pgt, spatial))
    by_ind_1 = {b.individual: b for b in boxes1}
    by_ind_gt = {b.individual: b for b in boxesgt}
    distance = 0.0
    for ind in sorted(set(by_ind_1) & set(by_ind_gt)):
        b1, bgt = by_ind_1[ind], by_ind_gt[ind]
        distance += float(np.linalg.norm(b1.center - bgt.center))
        distance += float(np.linalg.norm(b1.half_extents - bgt.half_extents))
    unmatched_1 = len(set(by_ind_1) - set(by_ind_gt))
    unmatched_gt = len(set(by_ind_gt) - set(by_ind_1))
    return diff, distance, unmatched_1, unmatched_gt


def _kb_boxes_as_bounding_boxes(kb: KnowledgeBase) -> list[BoundingBox]:
    boxes = []
    for ind, (center, half) in sorted(boxes_from_kb(kb).items()):
        boxes.append(
            BoundingBox.make(
                id=f"kb-{ind}",
                center=center,
                half_extents=half,
                quat_xyzw=[0.0, 0.0, 0.0, 1.0],
                individual=ind,
                class_name="Thing",
            )
        )
    return boxes


def evaluate(
    sm1: SemanticMap,
    smgt: SemanticMap,
    weights: EvaluationWeights = EvaluationWeights(),
    align: RigidTransform3 = RigidTransform3.identity(),
    gate: float = DEFAULT_MATCH_GATE,
) -> EvaluationReport:
    """Full comparison of a candidate map against the ground truth.

    ``align`` maps the candidate's frame into the ground-truth frame and is
    applied to the candidate geometry before matching. The spatial boxes are
    recovered from each knowledge base's position/size atoms.
    """
    moved = sm1.transformed(align) if not align.is_identity() else sm1
    corr = match_elements(moved.geometry, smgt.geometry, gate)
    geo = geometric_diff(moved.geometry, smgt.geometry, corr)
    boxes1 = _kb_boxes_as_bounding_boxes(moved.kb)
    # candidate box centers live in the candidate frame: align them too
    boxes1 = [
        BoundingBox.make(
            b.id, align.apply(b.center), b.half_extents,
            align.compose(b.orientation).q, b.individual, b.class_name,
        )
        for b in boxes1
    ]
    boxesgt = _kb_boxes_as_bounding_boxes(smgt.kb)
    diff, spatial_distance, unmatched_box_1, unmatched_box_gt = refined_diff(
        moved.kb, smgt.kb, boxes1, boxesgt
    )
    unmatched_1 = len(corr.unmatched_1) + unmatched_box_1
    unmatched_gt = len(corr.unmatched_gt) + unmatched_box_gt
    semantic_count = len(diff.delta) + len(diff.gamma)
    scalar = combine(
        weights, geo, semantic_count, spatial_distance, unmatched_1 + unmatched_gt
    )
    return EvaluationReport(
        geometric_error=geo,
        delta_count=len(diff.delta),
        gamma_count=len(diff.gamma),
        spatial_distance=spatial_distance,
        unmatched_1=unmatched_1,
        unmatched_gt=unmatched_gt,
        scalar=scalar,
    )
