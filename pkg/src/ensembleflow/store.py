"""Append-only ensemble (provenance) graph with persistence and
ancestor/descendant queries.

A run is persisted as a line-delimited log of self-describing JSON records
(meta / node / edge / mark / status) in canonical field order, so that
deterministic executions can be compared by byte equality.  Large output
series are stored in content-addressed sidecar blobs next to the log.
Nodes are always written before anything that references them, so any
prefix of a log is a closed, loadable graph.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .core import SeriesWindow, Window
from .errors import (
    CorruptLog,
    DuplicateId,
    RunExists,
    UnknownInstance,
    UnknownParent,
)
from .util import canonical_json, sha256_hex

LOG_FORMAT = 1
LOG_NAME = "run.log"
BLOB_DIR = "blobs"
#: Series longer than this many scalars move to a sidecar blob.
INLINE_VALUE_LIMIT = 512

STATUS_OK = "ok"
STATUS_FAILED = "failed"
STATUS_DROPPED = "dropped-child-source"


@dataclass(frozen=True)
class SimulationInstance:
    """One executed node of the ensemble: a model run with instantiated
    parameters over one output window, plus its provenance anchors."""

    id: str
    model_id: str
    step: int
    params: tuple[tuple[str, object], ...]
    window: Window
    inputs_digest: str
    status: str = STATUS_OK
    state_parent: Optional[str] = None
    outputs: tuple[SeriesWindow, ...] = ()
    error: Optional[str] = None

    def __post_init__(self):
        if self.status not in (STATUS_OK, STATUS_FAILED, STATUS_DROPPED):
            raise ValueError(f"unknown instance status {self.status!r}")
        if self.status == STATUS_OK and not self.outputs:
            raise ValueError("ok instances must carry outputs")
        if self.status == STATUS_FAILED and self.outputs:
            raise ValueError("failed instances carry no outputs")

    def params_dict(self) -> dict:
        return dict(self.params)

    def output(self, variable: str) -> Optional[SeriesWindow]:
        return next((o for o in self.outputs if o.variable == variable), None)


@dataclass(frozen=True)
class DataEdge:
    """Data (or state) handed from one instance to another; ``window`` is
    the slice of the producer's output actually consumed."""

    src: str
    dst: str
    variable: str
    window: Window
    kind: str = "data"

    def __post_init__(self):
        if self.kind not in ("data", "state"):
            raise ValueError(f"unknown edge kind {self.kind!r}")


class EnsembleGraph:
    """In-memory ensemble graph with append-only discipline.

    Committed nodes and edges are never mutated or removed; the only later
    amendment is a status mark (e.g. flagging an instance whose scenario
    branch was dropped), which is recorded separately so node records stay
    immutable.
    """

    def __init__(self, run_id: str, meta: Optional[dict] = None):
        self.run_id = run_id
        self.meta = dict(meta or {})
        self._nodes: dict[str, SimulationInstance] = {}
        self._in_edges: dict[str, list[DataEdge]] = {}
        self._out_edges: dict[str, list[DataEdge]] = {}
        self._marks: dict[str, str] = {}
        self.status: str = "running"
        self.trivial: bool = False
        self.incomplete: bool = False

    # -- queries ------------------------------------------------------------

    def __contains__(self, instance_id: str) -> bool:
        return instance_id in self._nodes

    def node(self, instance_id: str) -> SimulationInstance:
        try:
            return self._nodes[instance_id]
        except KeyError:
            raise UnknownInstance(instance_id) from None

    def nodes(self) -> list[SimulationInstance]:
        return list(self._nodes.values())

    def node_ids(self) -> list[str]:
        return list(self._nodes)

    def ok_node_ids(self) -> list[str]:
        return [i for i in self._nodes if self.status_of(i) == STATUS_OK]

    def edges(self) -> list[DataEdge]:
        return [e for edges in self._in_edges.values() for e in edges]

    def parents(self, instance_id: str) -> list[DataEdge]:
        self.node(instance_id)
        return list(self._in_edges.get(instance_id, ()))

    def children(self, instance_id: str) -> list[DataEdge]:
        self.node(instance_id)
        return list(self._out_edges.get(instance_id, ()))

    def status_of(self, instance_id: str) -> str:
        return self._marks.get(instance_id, self.node(instance_id).status)

    def model_ids(self) -> list[str]:
        return sorted({n.model_id for n in self._nodes.values()})

    def output_variables(self, model_id: str) -> set[str]:
        out: set[str] = set()
        for n in self._nodes.values():
            if n.model_id == model_id:
                out.update(o.variable for o in n.outputs)
        return out

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return sum(len(v) for v in self._in_edges.values())

    @property
    def horizon(self) -> int:
        stored = self.meta.get("horizon")
        if stored is not None:
            return int(stored)
        return max((n.window[1] for n in self._nodes.values()), default=0)

    def provenance(self, instance_id: str) -> tuple[list[SimulationInstance], list[DataEdge]]:
        """Complete history of an instance: the transitive closure over
        incoming data and state edges, including the instance itself."""
        root = self.node(instance_id)
        seen = {root.id}
        frontier = [root.id]
        edges: list[DataEdge] = []
        while frontier:
            nxt: list[str] = []
            for nid in frontier:
                for e in self._in_edges.get(nid, ()):
                    edges.append(e)
                    if e.src not in seen:
                        seen.add(e.src)
                        nxt.append(e.src)
            frontier = nxt
        nodes = [self._nodes[i] for i in self._nodes if i in seen]
        return nodes, edges

    def provenance_ids(self, instance_id: str) -> frozenset[str]:
        nodes, _ = self.provenance(instance_id)
        return frozenset(n.id for n in nodes)

    # -- appends ------------------------------------------------------------

    def add_instance(self, instance: SimulationInstance, parent_edges: Iterable[DataEdge]) -> str:
        parent_edges = list(parent_edges)
        if instance.id in self._nodes:
            raise DuplicateId(instance.id)
        for e in parent_edges:
            if e.dst != instance.id:
                raise ValueError(f"edge {e} does not target the appended instance")
            if e.src not in self._nodes:
                raise UnknownParent(e.src)
        if instance.state_parent is not None and instance.state_parent not in self._nodes:
            raise UnknownParent(instance.state_parent)
        self._nodes[instance.id] = instance
        self._in_edges[instance.id] = parent_edges
        self._out_edges.setdefault(instance.id, [])
        for e in parent_edges:
            self._out_edges.setdefault(e.src, []).append(e)
        return instance.id

    def add_mark(self, instance_id: str, status: str) -> None:
        self.node(instance_id)
        if status != STATUS_DROPPED:
            raise ValueError("only dropped-child-source marks are supported")
        self._marks[instance_id] = status

    def finalize(self, status: str, trivial: bool = False) -> None:
        self.status = status
        self.trivial = trivial

    # -- canonical form -----------------------------------------------------

    def canonical_records(self) -> list[dict]:
        """All content as plain records in a canonical order, for equality
        checks that ignore append interleaving."""
        recs: list[dict] = [self._meta_record()]
        for nid in sorted(self._nodes):
            recs.append(_node_record(self._nodes[nid], inline_all=True))
        edges = sorted(
            self.edges(), key=lambda e: (e.dst, e.src, e.kind, e.variable, e.window)
        )
        recs.extend(_edge_record(e) for e in edges)
        for nid in sorted(self._marks):
            recs.append({"kind": "mark", "node": nid, "status": self._marks[nid]})
        recs.append({"kind": "status", "status": self.status, "trivial": self.trivial})
        return recs

    def canonical_equal(self, other: "EnsembleGraph") -> bool:
        return self.canonical_records() == other.canonical_records()

    def _meta_record(self) -> dict:
        rec = {"kind": "meta", "format": LOG_FORMAT, "run_id": self.run_id}
        rec.update(self.meta)
        return rec


# ---------------------------------------------------------------------------
# Record encoding


def _series_record(series: SeriesWindow, blob_dir: Optional[Path], inline_all: bool) -> dict:
    d = series.as_dict()
    values = d.pop("values")
    flat = int(np.asarray(values).size)
    if inline_all or blob_dir is None or flat <= INLINE_VALUE_LIMIT:
        d["values"] = values
        if series.values.ndim == 2:
            d["dim"] = series.values.shape[1]
        return d
    payload = canonical_json({"values": values})
    digest = sha256_hex(payload)
    blob_dir.mkdir(parents=True, exist_ok=True)
    blob_path = blob_dir / f"{digest}.json"
    if not blob_path.exists():
        blob_path.write_text(payload, encoding="utf-8")
    d["blob"] = digest
    if series.values.ndim == 2:
        d["dim"] = series.values.shape[1]
    return d


def _series_from_record(d: Mapping, blob_dir: Optional[Path]) -> SeriesWindow:
    if "blob" in d:
        if blob_dir is None:
            raise CorruptLog("blob reference without a blob directory")
        blob_path = blob_dir / f"{d['blob']}.json"
        if not blob_path.exists():
            raise CorruptLog(f"missing blob {d['blob']}")
        values = json.loads(blob_path.read_text(encoding="utf-8"))["values"]
    else:
        values = d["values"]
    return SeriesWindow(
        variable=d["variable"],
        t_start=d["t_start"],
        t_end=d["t_end"],
        resolution=d["resolution"],
        values=np.asarray(values, dtype=float),
    )


def _node_record(inst: SimulationInstance, blob_dir: Optional[Path] = None, inline_all: bool = False) -> dict:
    return {
        "kind": "node",
        "id": inst.id,
        "model": inst.model_id,
        "step": inst.step,
        "params": dict(inst.params),
        "window": list(inst.window),
        "inputs_digest": inst.inputs_digest,
        "status": inst.status,
        "state_parent": inst.state_parent,
        "error": inst.error,
        "outputs": [_series_record(o, blob_dir, inline_all) for o in inst.outputs],
    }


def _node_from_record(d: Mapping, blob_dir: Optional[Path]) -> SimulationInstance:
    return SimulationInstance(
        id=d["id"],
        model_id=d["model"],
        step=d["step"],
        params=tuple(sorted(d["params"].items())),
        window=(d["window"][0], d["window"][1]),
        inputs_digest=d["inputs_digest"],
        status=d["status"],
        state_parent=d.get("state_parent"),
        outputs=tuple(_series_from_record(o, blob_dir) for o in d["outputs"]),
        error=d.get("error"),
    )


def _edge_record(e: DataEdge) -> dict:
    return {
        "kind": "edge",
        "from": e.src,
        "to": e.dst,
        "variable": e.variable,
        "window": list(e.window),
        "edge_kind": e.kind,
    }


def _edge_from_record(d: Mapping) -> DataEdge:
    return DataEdge(
        src=d["from"],
        dst=d["to"],
        variable=d["variable"],
        window=(d["window"][0], d["window"][1]),
        kind=d["edge_kind"],
    )


# ---------------------------------------------------------------------------
# Persistence


class RunLog:
    """Serialized appender for one run directory.

    Each append is written (and flushed) before it is applied to the
    in-memory graph, so a crash leaves a loadable prefix.
    """

    def __init__(self, directory: Path, run_id: str, meta: Optional[dict] = None):
        self.directory = Path(directory)
        if self.directory.exists() and any(self.directory.iterdir()):
            raise RunExists(str(self.directory))
        self.directory.mkdir(parents=True, exist_ok=True)
        self.graph = EnsembleGraph(run_id, meta)
        self._fh = open(self.directory / LOG_NAME, "w", encoding="utf-8")
        self._write(self.graph._meta_record())

    @property
    def blob_dir(self) -> Path:
        return self.directory / BLOB_DIR

    def _write(self, record: dict) -> None:
        self._fh.write(canonical_json(record))
        self._fh.write("\n")
        self._fh.flush()

    def append_instance(self, instance: SimulationInstance, parent_edges: Iterable[DataEdge]) -> str:
        parent_edges = list(parent_edges)
        # Validate against the in-memory graph first so a rejected append
        # leaves no partial record behind.
        if instance.id in self.graph:
            raise DuplicateId(instance.id)
        for e in parent_edges:
            if e.src not in self.graph:
                raise UnknownParent(e.src)
        if instance.state_parent is not None and instance.state_parent not in self.graph:
            raise UnknownParent(instance.state_parent)
        self._write(_node_record(instance, self.blob_dir))
        for e in parent_edges:
            self._write(_edge_record(e))
        return self.graph.add_instance(instance, parent_edges)

    def append_mark(self, instance_id: str, status: str) -> None:
        self.graph.add_mark(instance_id, status)
        self._write({"kind": "mark", "node": instance_id, "status": status})

    def finalize(self, status: str, trivial: bool = False) -> None:
        self.graph.finalize(status, trivial)
        self._write({"kind": "status", "status": status, "trivial": trivial})
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def save_run(graph: EnsembleGraph, directory: Path | str) -> None:
    """Persist a graph to a run directory (append order preserved)."""
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()):
        raise RunExists(str(directory))
    directory.mkdir(parents=True, exist_ok=True)
    blob_dir = directory / BLOB_DIR
    with open(directory / LOG_NAME, "w", encoding="utf-8") as fh:
        def emit(rec):
            fh.write(canonical_json(rec))
            fh.write("\n")

        emit(graph._meta_record())
        for inst in graph.nodes():
            emit(_node_record(inst, blob_dir))
            for e in graph.parents(inst.id):
                emit(_edge_record(e))
        for nid, status in graph._marks.items():
            emit({"kind": "mark", "node": nid, "status": status})
        emit({"kind": "status", "status": graph.status, "trivial": graph.trivial})


def load_run(directory: Path | str) -> EnsembleGraph:
    """Load a run directory.  A truncated or malformed tail is dropped: the
    valid prefix is returned with ``incomplete`` set."""
    directory = Path(directory)
    log_path = directory / LOG_NAME
    if not log_path.exists():
        raise CorruptLog(f"no run log at {log_path}")
    blob_dir = directory / BLOB_DIR
    graph: Optional[EnsembleGraph] = None
    finalized = False
    damaged = False
    with open(log_path, "r", encoding="utf-8") as fh:
        pending_edges: list[DataEdge] = []
        pending_node: Optional[SimulationInstance] = None

        def commit_pending():
            if pending_node is not None:
                graph.add_instance(pending_node, pending_edges)

        for raw in fh:
            if not raw.endswith("\n"):
                damaged = True
                break
            try:
                rec = json.loads(raw)
                kind = rec["kind"]
                if kind == "meta":
                    meta = {
                        k: v
                        for k, v in rec.items()
                        if k not in ("kind", "format", "run_id")
                    }
                    graph = EnsembleGraph(rec["run_id"], meta)
                elif graph is None:
                    raise CorruptLog("log does not start with a meta record")
                elif kind == "node":
                    commit_pending()
                    pending_node = _node_from_record(rec, blob_dir)
                    pending_edges = []
                elif kind == "edge":
                    if pending_node is None or rec["to"] != pending_node.id:
                        raise CorruptLog("edge record without its node")
                    pending_edges.append(_edge_from_record(rec))
                elif kind == "mark":
                    commit_pending()
                    pending_node = None
                    graph.add_mark(rec["node"], rec["status"])
                elif kind == "status":
                    commit_pending()
                    pending_node = None
                    graph.finalize(rec["status"], rec.get("trivial", False))
                    finalized = rec["status"] in ("complete", "incomplete")
                else:
                    raise CorruptLog(f"unknown record kind {kind!r}")
            except (
                json.JSONDecodeError,
                KeyError,
                IndexError,
                TypeError,
                ValueError,
                CorruptLog,
                UnknownParent,
                DuplicateId,
            ):
                damaged = True
                pending_node = None
                break
        if not damaged:
            commit_pending()
    if graph is None:
        raise CorruptLog(f"log at {log_path} has no loadable meta record")
    if damaged or not finalized:
        graph.incomplete = True
        if graph.status == "running":
            graph.status = "incomplete"
    return graph


class RunStore:
    """Directory of runs: one subdirectory per run id (log + blobs)."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / LOG_NAME).exists()

    def create(self, run_id: str, meta: Optional[dict] = None, overwrite: bool = False) -> RunLog:
        directory = self.run_dir(run_id)
        if self.exists(run_id):
            if not overwrite:
                raise RunExists(run_id)
            import shutil

            shutil.rmtree(directory)
        return RunLog(directory, run_id, meta)

    def load(self, run_id: str) -> EnsembleGraph:
        if not self.exists(run_id):
            raise UnknownInstance(f"no run named {run_id!r}")
        return load_run(self.run_dir(run_id))

    def list_runs(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(
            p.name for p in self.root.iterdir() if (p / LOG_NAME).exists()
        )

    def created_at(self, run_id: str) -> float:
        return (self.run_dir(run_id) / LOG_NAME).stat().st_mtime
