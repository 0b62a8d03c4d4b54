"""Semantic map toolkit: representation, evaluation, and dataset construction."""

from .geometry import BoundingBox, GeometricElement, GeometricSet, PointCloud
from .kb import Atom, KnowledgeBase, atom
from .semantic_map import SemanticMap, validate_map
from .transforms import ReferenceFrame, RigidTransform3, TransformTree

__all__ = [
    "Atom",
    "BoundingBox",
    "GeometricElement",
    "GeometricSet",
    "KnowledgeBase",
    "PointCloud",
    "ReferenceFrame",
    "RigidTransform3",
    "SemanticMap",
    "TransformTree",
    "atom",
    "validate_map",
]
