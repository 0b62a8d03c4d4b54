"""The semantic-map triple: reference frame, geometry, and knowledge base."""

from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import GeometricSet, PointCloud
from .kb import KnowledgeBase, TaxonomyCycleError, Violation, validate_kb
from .transforms import ReferenceFrame, RigidTransform3


@dataclass(frozen=True)
class SemanticMap:
    """Global frame + geometric elements (with M_s) + knowledge base (with P_s)."""

    frame: ReferenceFrame = ReferenceFrame("map")
    geometry: GeometricSet = GeometricSet()
    cloud: PointCloud | None = None
    kb: KnowledgeBase = field(default_factory=KnowledgeBase)

    def transformed(self, transform: RigidTransform3) -> SemanticMap:
        """Express all geometry in the frame reached through ``transform``."""
        elements = tuple(e.transformed(transform) for e in self.geometry.elements)
        return SemanticMap(
            frame=self.frame,
            geometry=GeometricSet(elements, self.geometry.semantic_ids),
            cloud=None if self.cloud is None else self.cloud.transformed(transform),
            kb=self.kb,
        )


def validate_map(semantic_map: SemanticMap) -> list[Violation]:
    """All invariant breaches of the map, its geometry links, and its KB.

    Returns an empty list for a well-formed map. Unlinked M_s elements are
    reported with warning severity and do not make the map invalid.
    """
    violations: list[Violation] = []
    kb = semantic_map.kb
    by_id = {e.id: e for e in semantic_map.geometry.elements}
    for element in semantic_map.geometry.elements:
        if element.individual is not None and element.individual not in kb.individuals:
            violations.append(
                Violation(
                    code="dangling-individual",
                    subject=element.id,
                    message=f"element {element.id!r} links to undeclared "
                    f"individual {element.individual!r}",
                )
            )
    for eid in sorted(semantic_map.geometry.semantic_ids):
        if by_id[eid].individual is None:
            violations.append(
                Violation(
                    code="unlinked-semantic-element",
                    subject=eid,
                    message=f"semantic element {eid!r} has no individual link",
                    severity="warning",
                )
            )
    if not kb.spatial_atoms():
        violations.append(
            Violation(
                code="empty-spatial-subset",
                subject="P_s",
                message="the spatial predicate subset P_s is empty",
            )
        )
    violations.extend(validate_kb(kb))
    return violations


def is_valid(violations: list[Violation]) -> bool:
    return not any(v.severity == "error" for v in violations)
