"""Annotation API served over HTTP for the browser tool.

All dataset mutations flow through here: box edits, manual loop-closure
edges, and pose-graph optimization. Every write re-runs map validation and
returns the violation list; writes are serialized by a process-wide lock
plus the dataset's advisory file lock.
"""

from __future__ import annotations

import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .errors import SemmapError, ValidationFailure
from .evaluation import SPATIAL_PREDICATES
from .geometry import BoundingBox, PointCloud, voxel_downsample
from .kb import Atom, INSTANCE_OF, KnowledgeBase
from .mapping import add_manual_edge, chi2, optimize
from .registration import RegistrationConfig
from .semantic_map import validate_map
from .transforms import RigidTransform3
from .io.boxes import write_boxes
from .io.dataset import (
    BOXES_FILE,
    GRAPH_FILE,
    ONTOLOGY_FILE,
    Dataset,
    fuse,
    load_dataset,
    writer_lock,
)
from .io.graph import write_graph
from .io.kbfile import write_kb

MAX_VIEW_POINTS = 500_000
CHUNK_SIZE = 65_536


class EdgeRequest(BaseModel):
    a: str
    b: str
    guess: list[float] | None = None  # x y z qx qy qz qw


class BoxRequest(BaseModel):
    id: str | None = None
    center: list[float] = Field(min_length=3, max_length=3)
    half_extents: list[float] = Field(min_length=3, max_length=3)
    orientation: list[float] = Field(default=[0.0, 0.0, 0.0, 1.0], min_length=4, max_length=4)
    class_name: str
    individual: str


class ClassAssignment(BaseModel):
    class_name: str


def _pose_list(t: RigidTransform3) -> list[float]:
    return [float(v) for v in t.to_xyzq()]


def _box_dict(b: BoundingBox) -> dict:
    return {
        "id": b.id,
        "center": [float(v) for v in b.center],
        "half_extents": [float(v) for v in b.half_extents],
        "orientation": [float(v) for v in b.orientation.q],
        "class_name": b.class_name,
        "individual": b.individual,
    }


class DatasetSession:
    """Mutable server-side view of one dataset directory."""

    def __init__(self, root, reg_cfg: RegistrationConfig | None = None):
        self.root = Path(root)
        self.reg_cfg = reg_cfg or RegistrationConfig()
        self.write_lock = threading.Lock()
        self.dataset: Dataset = load_dataset(self.root)
        if self.dataset.kb is None:
            self.dataset.kb = KnowledgeBase()
        if self.dataset.boxes is None:
            self.dataset.boxes = []
        self._view_cache: PointCloud | None = None

    # -- read side -----------------------------------------------------

    def decimated_cloud(self) -> PointCloud:
        if self._view_cache is not None:
            return self._view_cache
        cloud = self.dataset.cloud or PointCloud()
        voxel = 0.01
        while len(cloud) > MAX_VIEW_POINTS:
            cloud = voxel_downsample(self.dataset.cloud, voxel)
            voxel *= 2.0
        self._view_cache = cloud
        return cloud

    def validation(self) -> list[dict]:
        if self.dataset.cloud is None:
            return []
        semantic = fuse(
            self.dataset.cloud, self.dataset.boxes, self.dataset.kb,
            self.dataset.frame_name(),
        )
        return [v.as_dict() for v in validate_map(semantic)]

    # -- write side (caller holds write_lock) ---------------------------

    def persist_boxes_and_kb(self):
        with writer_lock(self.root):
            write_boxes(self.root / BOXES_FILE, self.dataset.boxes)
            write_kb(self.root / ONTOLOGY_FILE, self._kb_without_spatial())

    def _kb_without_spatial(self) -> KnowledgeBase:
        # the on-disk ontology stays pre-fusion: spatial atoms are derived
        kb = self.dataset.kb
        return KnowledgeBase(
            classes=kb.classes,
            individuals=kb.individuals,
            atoms={a for a in kb.atoms if a.predicate not in SPATIAL_PREDICATES},
            function_like=kb.function_like,
            spatial_predicates=kb.spatial_predicates,
            connects_roles=kb.connects_roles,
        )

    def persist_graph(self):
        with writer_lock(self.root):
            write_graph(self.root / GRAPH_FILE, self.dataset.graph)

    def upsert_box(self, req: BoxRequest) -> dict:
        box_id = req.id or f"box{len(self.dataset.boxes):04d}"
        while req.id is None and any(b.id == box_id for b in self.dataset.boxes):
            box_id = f"box{int(box_id[3:]) + 1:04d}"
        box = BoundingBox.make(
            box_id, req.center, req.half_extents, req.orientation,
            req.individual, req.class_name,
        )
        kb = self.dataset.kb
        if req.class_name not in kb.classes:
            raise ValidationFailure(f"unknown class {req.class_name!r}")
        if req.individual not in kb.individuals:
            kb = kb.with_individuals({req.individual})
        kb = kb.with_atoms({Atom(INSTANCE_OF, (req.individual, req.class_name))})
        self.dataset.kb = kb
        self.dataset.boxes = [b for b in self.dataset.boxes if b.id != box_id] + [box]
        self.persist_boxes_and_kb()
        return _box_dict(box)

    def delete_box(self, box_id: str):
        if not any(b.id == box_id for b in self.dataset.boxes):
            raise KeyError(box_id)
        self.dataset.boxes = [b for b in self.dataset.boxes if b.id != box_id]
        self.persist_boxes_and_kb()

    def assign_class(self, box_id: str, class_name: str) -> dict:
        matches = [b for b in self.dataset.boxes if b.id == box_id]
        if not matches:
            raise KeyError(box_id)
        if class_name not in self.dataset.kb.classes:
            raise ValidationFailure(f"unknown class {class_name!r}")
        old = matches[0]
        new = old.with_class(class_name)
        kb = self.dataset.kb.without_atoms({Atom(INSTANCE_OF, (old.individual, old.class_name))})
        kb = kb.with_atoms({Atom(INSTANCE_OF, (old.individual, class_name))})
        self.dataset.kb = kb
        self.dataset.boxes = [new if b.id == box_id else b for b in self.dataset.boxes]
        self.persist_boxes_and_kb()
        return _box_dict(new)


def create_app(root, reg_cfg: RegistrationConfig | None = None) -> FastAPI:
    session = DatasetSession(root, reg_cfg)
    app = FastAPI(title="semmap annotation API")
    app.state.session = session

    @app.exception_handler(SemmapError)
    async def _semmap_error(request, exc):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.get("/api/map")
    def get_map(chunk: int = 0):
        cloud = session.decimated_cloud()
        n_chunks = max(1, int(np.ceil(len(cloud) / CHUNK_SIZE)))
        if not (0 <= chunk < n_chunks):
            raise HTTPException(status_code=404, detail="chunk out of range")
        lo, hi = chunk * CHUNK_SIZE, min((chunk + 1) * CHUNK_SIZE, len(cloud))
        body = {
            "chunk": chunk,
            "n_chunks": n_chunks,
            "n_points": len(cloud),
            "points": cloud.points[lo:hi].round(4).tolist(),
        }
        if cloud.colors is not None:
            body["colors"] = cloud.colors[lo:hi].tolist()
        return body

    @app.get("/api/graph")
    def get_graph():
        graph = session.dataset.graph
        if graph is None:
            return {"nodes": [], "edges": [], "chi2": 0.0}
        return {
            "nodes": [
                {"id": n.id, "pose": _pose_list(n.pose)} for n in graph.nodes.values()
            ],
            "edges": [
                {"a": e.a, "b": e.b, "measurement": _pose_list(e.measurement)}
                for e in graph.edges
            ],
            "chi2": chi2(graph),
        }

    @app.post("/api/edges")
    def post_edge(req: EdgeRequest):
        with session.write_lock:
            graph = session.dataset.graph
            if graph is None:
                raise HTTPException(status_code=409, detail="dataset has no pose graph")
            guess = (
                RigidTransform3.from_xyzq(req.guess)
                if req.guess is not None
                else RigidTransform3.identity()
            )
            new_graph, result = add_manual_edge(graph, req.a, req.b, guess, session.reg_cfg)
            added = result.converged
            if added:
                session.dataset.graph = new_graph
                session.persist_graph()
            return {
                "added": added,
                "result": {
                    "converged": result.converged,
                    "mean_residual": result.mean_residual,
                    "inlier_fraction": result.inlier_fraction,
                    "iterations": result.iterations,
                    "message": result.message,
                    "transform": _pose_list(result.transform),
                },
                "violations": session.validation(),
            }

    @app.post("/api/optimize")
    def post_optimize():
        with session.write_lock:
            graph = session.dataset.graph
            if graph is None:
                raise HTTPException(status_code=409, detail="dataset has no pose graph")
            before = chi2(graph)
            optimized = optimize(graph)
            session.dataset.graph = optimized
            session.persist_graph()
            return {
                "chi2_before": before,
                "chi2_after": chi2(optimized),
                "violations": session.validation(),
            }

    @app.get("/api/boxes")
    def get_boxes():
        return [_box_dict(b) for b in session.dataset.boxes]

    @app.post("/api/boxes")
    def post_box(req: BoxRequest):
        with session.write_lock:
            box = session.upsert_box(req)
            return {"box": box, "violations": session.validation()}

    @app.delete("/api/boxes/{box_id}")
    def delete_box(box_id: str):
        with session.write_lock:
            try:
                session.delete_box(box_id)
            except KeyError:
                raise HTTPException(status_code=404, detail=f"no box {box_id!r}")
            return {"violations": session.validation()}

    @app.post("/api/boxes/{box_id}/class")
    def post_box_class(box_id: str, req: ClassAssignment):
        with session.write_lock:
            try:
                box = session.assign_class(box_id, req.class_name)
            except KeyError:
                raise HTTPException(status_code=404, detail=f"no box {box_id!r}")
            return {"box": box, "violations": session.validation()}

    @app.get("/api/hierarchy")
    def get_hierarchy():
        kb = session.dataset.kb
        edges = sorted(
            (a.args[0], a.args[1])
            for a in kb.atoms
            if a.predicate == "is-a" and a.args[0] != a.args[1]
        )
        return {"classes": sorted(kb.classes), "is_a": [list(e) for e in edges]}

    return app
