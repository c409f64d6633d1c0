"""HTTP service exposing runs, ensemble graphs, timeline extraction, and
timeline export to the explorer UI and to scripts.

Read endpoints are pure over store snapshots; the only writes are export
artifacts and the extraction cache.  Extraction runs synchronously up to a
configurable time budget and answers 202 while still computing; identical
requests (by canonical request hash) share one computation and return
identical timeline ids.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FuturesTimeout
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field, field_validator

from . import __version__, timeline as tl
from .errors import UnknownInstance, UnknownVariable
from .store import EnsembleGraph, RunStore
from .util import canonical_json, sha256_hex

DEFAULT_MAX_POINTS = 2000


# ---------------------------------------------------------------------------
# Wire schemas


class RunSummary(BaseModel):
    run_id: str
    flow_name: str
    horizon: int
    node_count: int
    edge_count: int
    status: Literal["running", "complete", "incomplete"]
    trivial: bool = False
    created_at: float


class NodeOut(BaseModel):
    id: str
    model: str
    step: int
    window: tuple[int, int]
    status: str
    params: dict
    state_parent: Optional[str] = None
    output_variables: list[str]


class EdgeOut(BaseModel):
    source: str = Field(alias="from")
    target: str = Field(alias="to")
    variable: str
    window: tuple[int, int]
    edge_kind: str

    model_config = {"populate_by_name": True}


class GraphPage(BaseModel):
    run_id: str
    page: int
    page_size: int
    total_nodes: int
    total_pages: int
    nodes: list[NodeOut]
    edges: list[EdgeOut]


class MatchTarget(BaseModel):
    t_start: int = 0
    resolution: int = Field(default=1, ge=1)
    values: list[float] = Field(min_length=1)


class TermIn(BaseModel):
    model: str
    variable: str
    objective: Literal["maximize", "minimize", "match"]
    target: Optional[MatchTarget] = None
    weight: float = 1.0

    @field_validator("weight")
    @classmethod
    def _finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("weight must be finite")
        return v


class CriterionIn(BaseModel):
    terms: list[TermIn] = Field(min_length=1)


class TimelineRequest(BaseModel):
    criterion: CriterionIn
    k: int = Field(default=3, ge=1)
    lam: float = Field(default=0.3, ge=0.0, le=1.0, alias="lambda")
    beam_width: int = Field(default=64, ge=1)

    model_config = {"populate_by_name": True}


class TimelineSummary(BaseModel):
    id: str
    score: float
    coverage: float
    node_count: int


class ExtractionResult(BaseModel):
    status: Literal["complete", "computing"]
    request_id: str
    timelines: list[TimelineSummary] = []


class SeriesOut(BaseModel):
    model: str
    variable: str
    t_start: int
    resolution: int
    values: list[Optional[float]]


class TimelineDetail(BaseModel):
    id: str
    run_id: str
    score: float
    coverage: float
    node_ids: list[str]
    series: list[SeriesOut]


class ProvenanceOut(BaseModel):
    root: str
    nodes: list[NodeOut]
    edges: list[EdgeOut]


class ExportResult(BaseModel):
    export_id: str
    path: str


# ---------------------------------------------------------------------------
# Conversion helpers


def _criterion_from_request(c: CriterionIn) -> tl.PreferenceCriterion:
    return tl.criterion_from_dict(
        {
            "terms": [
                {
                    "model": t.model,
                    "variable": t.variable,
                    "objective": t.objective,
                    "weight": t.weight,
                    "target": t.target.model_dump() if t.target else None,
                }
                for t in c.terms
            ]
        }
    )


def _node_out(graph: EnsembleGraph, inst) -> NodeOut:
    return NodeOut(
        id=inst.id,
        model=inst.model_id,
        step=inst.step,
        window=inst.window,
        status=graph.status_of(inst.id),
        params=inst.params_dict(),
        state_parent=inst.state_parent,
        output_variables=[o.variable for o in inst.outputs],
    )


def _edge_out(e) -> EdgeOut:
    return EdgeOut.model_validate(
        {"from": e.src, "to": e.dst, "variable": e.variable, "window": e.window,
         "edge_kind": e.kind}
    )


def _downsample(values: np.ndarray, max_points: int) -> tuple[list[Optional[float]], int]:
    """Bucket means down to max_points; all-NaN buckets stay null.  Returns
    (values, bucket width in ticks)."""
    n = len(values)
    if n <= max_points:
        out = [None if math.isnan(v) else float(v) for v in values]
        return out, 1
    width = math.ceil(n / max_points)
    out: list[Optional[float]] = []
    for i in range(0, n, width):
        chunk = values[i : i + width]
        finite = chunk[~np.isnan(chunk)]
        out.append(float(finite.mean()) if finite.size else None)
    return out, width


# ---------------------------------------------------------------------------
# Extraction manager


class _Extractions:
    """One computation per request hash, shared across identical requests."""

    def __init__(self, budget_s: float):
        self.budget_s = budget_s
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=2)
        self._futures: dict[str, Future] = {}
        #: timeline id -> (Timeline, criterion, diversity) for detail/export
        self.timelines: dict[str, tuple] = {}

    def submit(self, request_id: str, fn) -> Future:
        with self._lock:
            fut = self._futures.get(request_id)
            if fut is None:
                fut = self._pool.submit(fn)
                self._futures[request_id] = fut
            return fut

    def remember(self, timelines, criterion, diversity) -> None:
        with self._lock:
            for t in timelines:
                self.timelines[t.timeline_id] = (t, criterion, diversity)


# ---------------------------------------------------------------------------
# Application


def create_app(
    store_root: Path | str,
    *,
    extraction_budget_s: float = 15.0,
    static_dir: Optional[Path | str] = None,
) -> FastAPI:
    store = RunStore(store_root)
    app = FastAPI(
        title="ensembleflow service",
        version=__version__,
        description="Explore simulation ensembles and extract diverse timelines.",
    )
    extractions = _Extractions(extraction_budget_s)
    graphs: dict[str, EnsembleGraph] = {}

    def graph_of(run_id: str) -> EnsembleGraph:
        if run_id not in graphs:
            try:
                graphs[run_id] = store.load(run_id)
            except UnknownInstance:
                raise HTTPException(404, f"unknown run {run_id!r}")
        return graphs[run_id]

    def summary_of(run_id: str) -> RunSummary:
        g = graph_of(run_id)
        status = g.status if g.status in ("running", "complete", "incomplete") else "incomplete"
        return RunSummary(
            run_id=run_id,
            flow_name=str(g.meta.get("flow_name", "")),
            horizon=g.horizon,
            node_count=g.node_count,
            edge_count=g.edge_count,
            status=status,
            trivial=g.trivial,
            created_at=store.created_at(run_id),
        )

    @app.get("/api/runs", response_model=list[RunSummary])
    def list_runs():
        return [summary_of(run_id) for run_id in store.list_runs()]

    @app.get("/api/runs/{run_id}", response_model=RunSummary)
    def get_run(run_id: str):
        return summary_of(run_id)

    @app.get("/api/runs/{run_id}/graph", response_model=GraphPage)
    def get_graph(
        run_id: str,
        models: Optional[list[str]] = Query(default=None),
        step_min: Optional[int] = None,
        step_max: Optional[int] = None,
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=500, ge=1, le=10_000),
    ):
        g = graph_of(run_id)
        nodes = sorted(g.nodes(), key=lambda n: (n.step, n.model_id, n.id))
        if models:
            wanted = set(models)
            nodes = [n for n in nodes if n.model_id in wanted]
        if step_min is not None:
            nodes = [n for n in nodes if n.step >= step_min]
        if step_max is not None:
            nodes = [n for n in nodes if n.step <= step_max]
        total = len(nodes)
        total_pages = max(1, math.ceil(total / page_size))
        chunk = nodes[(page - 1) * page_size : page * page_size]
        ids = {n.id for n in chunk}
        in_filter = {n.id for n in nodes}
        edges = [
            _edge_out(e)
            for n in chunk
            for e in g.parents(n.id)
            if e.src in in_filter and e.dst in ids
        ]
        return GraphPage(
            run_id=run_id,
            page=page,
            page_size=page_size,
            total_nodes=total,
            total_pages=total_pages,
            nodes=[_node_out(g, n) for n in chunk],
            edges=edges,
        )

    @app.post(
        "/api/runs/{run_id}/timelines",
        response_model=ExtractionResult,
        responses={202: {"model": ExtractionResult}},
    )
    def extract(run_id: str, request: TimelineRequest, response: Response):
        g = graph_of(run_id)
        request_id = "req-" + sha256_hex(
            canonical_json([run_id, request.model_dump(by_alias=True)])
        )[:12]
        criterion = _criterion_from_request(request.criterion)
        for term in criterion.terms:
            if term.model_id not in g.model_ids():
                raise HTTPException(
                    422,
                    detail=[
                        {
                            "loc": ["body", "criterion", "terms"],
                            "msg": f"model {term.model_id!r} has no instances in run",
                            "type": "value_error",
                        }
                    ],
                )
            if term.variable not in g.output_variables(term.model_id):
                raise HTTPException(
                    422,
                    detail=[
                        {
                            "loc": ["body", "criterion", "terms"],
                            "msg": f"{term.model_id!r} has no output {term.variable!r}",
                            "type": "value_error",
                        }
                    ],
                )
        diversity = tl.DiversityConfig(
            k=request.k, lam=request.lam, beam_width=request.beam_width
        )

        def compute():
            found = tl.extract_top_k(g, criterion, diversity)
            extractions.remember(found, criterion, diversity)
            return found

        fut = extractions.submit(request_id, compute)
        try:
            found = fut.result(timeout=extractions.budget_s)
        except FuturesTimeout:
            response.status_code = 202
            return ExtractionResult(status="computing", request_id=request_id)
        return ExtractionResult(
            status="complete",
            request_id=request_id,
            timelines=[
                TimelineSummary(
                    id=t.timeline_id,
                    score=t.score,
                    coverage=t.coverage,
                    node_count=len(t.node_ids),
                )
                for t in found
            ],
        )

    @app.get("/api/runs/{run_id}/timelines/{timeline_id}", response_model=TimelineDetail)
    def timeline_detail(
        run_id: str,
        timeline_id: str,
        max_points: int = Query(default=DEFAULT_MAX_POINTS, ge=2),
    ):
        g = graph_of(run_id)
        entry = extractions.timelines.get(timeline_id)
        if entry is None or entry[0].run_id != run_id:
            raise HTTPException(404, f"unknown timeline {timeline_id!r}")
        t = entry[0]
        series = []
        for model_id in g.model_ids():
            for variable in sorted(g.output_variables(model_id)):
                stitched = tl.timeline_series(g, t.node_ids, model_id, variable)
                if stitched is None or stitched.values.ndim != 1:
                    continue
                values, width = _downsample(np.asarray(stitched.values), max_points)
                series.append(
                    SeriesOut(
                        model=model_id,
                        variable=variable,
                        t_start=stitched.t_start,
                        resolution=stitched.resolution * width,
                        values=values,
                    )
                )
        return TimelineDetail(
            id=t.timeline_id,
            run_id=run_id,
            score=t.score,
            coverage=t.coverage,
            node_ids=sorted(t.node_ids),
            series=series,
        )

    @app.get(
        "/api/runs/{run_id}/instances/{instance_id}/provenance",
        response_model=ProvenanceOut,
    )
    def provenance(run_id: str, instance_id: str):
        g = graph_of(run_id)
        try:
            nodes, edges = g.provenance(instance_id)
        except UnknownInstance:
            raise HTTPException(404, f"unknown instance {instance_id!r}")
        return ProvenanceOut(
            root=instance_id,
            nodes=[_node_out(g, n) for n in nodes],
            edges=[_edge_out(e) for e in edges],
        )

    @app.post(
        "/api/runs/{run_id}/timelines/{timeline_id}/export",
        response_model=ExportResult,
    )
    def export(run_id: str, timeline_id: str):
        g = graph_of(run_id)
        entry = extractions.timelines.get(timeline_id)
        if entry is None or entry[0].run_id != run_id:
            raise HTTPException(404, f"unknown timeline {timeline_id!r}")
        t, criterion, diversity = entry
        export_dir = store.run_dir(run_id) / "exports"
        export_dir.mkdir(parents=True, exist_ok=True)
        path = export_dir / f"{timeline_id}.json"
        if not path.exists():
            doc = tl.export_timeline(g, t, criterion, diversity)
            path.write_text(canonical_json(doc), encoding="utf-8")
        return ExportResult(export_id=timeline_id, path=str(path))

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
