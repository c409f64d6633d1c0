"""Domain types for models, flows, windows, and streams, plus the window
algebra and flow validation used by every other module.

Time is a discrete integer tick axis starting at 0.  A model advances in
execution steps: step ``s`` of a model with shift ``delta`` reads input over
``[s*delta, s*delta + w_in)`` and writes output over
``[s*delta, s*delta + w_out)``.  Source models (no declared inputs) have no
input window.  Flow edges carry an integer ``lag``: a lag-L edge at consumer
step ``s`` reads producer data for the input window shifted back by L ticks,
which is what lets feedback loops (e.g. behavior reading the previous
disease-state window) unroll into an acyclic execution graph.

All types here are immutable after construction and safe to share across
threads; the operations are pure functions.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import UnsatisfiableInput

#: Half-open tick interval [lo, hi).
Window = tuple[int, int]

#: A (model id, step index) pair identifying one unrolled task.
TaskKey = tuple[str, int]


def window_length(w: Window) -> int:
    return w[1] - w[0]


def windows_intersect(a: Window, b: Window) -> bool:
    return a[0] < b[1] and b[0] < a[1]


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class VariableSpec:
    """A named input or output variable of a model.

    ``kind`` is ``"scalar"`` or ``"vector"``; vector variables carry a fixed
    per-sample dimension ``dim``.  Values are always numeric: categorical
    model outputs must be numerically encoded by the model author.
    """

    name: str
    kind: str = "scalar"
    dim: int = 1
    unit: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValueError("variable name must be non-empty")
        if self.kind not in ("scalar", "vector"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("variable dim must be >= 1")
        if self.kind == "scalar" and self.dim != 1:
            raise ValueError("scalar variables have dim 1")

    @property
    def kind_label(self) -> str:
        return "scalar" if self.kind == "scalar" else f"vector[{self.dim}]"


@dataclass(frozen=True)
class ContinuousDomain:
    """Closed interval [low, high] of real parameter values."""

    low: float
    high: float

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ValueError("continuous domain bounds must be finite")
        if not self.low < self.high:
            raise ValueError("continuous domain requires low < high")

    def contains(self, value) -> bool:
        return isinstance(value, (int, float)) and self.low <= value <= self.high


@dataclass(frozen=True)
class DiscreteDomain:
    """Finite, duplicate-free list of admissible parameter values."""

    values: tuple

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("discrete domain must be non-empty")
        if len(set(self.values)) != len(self.values):
            raise ValueError("discrete domain must be duplicate-free")

    def contains(self, value) -> bool:
        return value in self.values


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    domain: ContinuousDomain | DiscreteDomain

    def __post_init__(self):
        if not self.name:
            raise ValueError("parameter name must be non-empty")

    @property
    def is_continuous(self) -> bool:
        return isinstance(self.domain, ContinuousDomain)


@dataclass(frozen=True)
class ScopeDescriptor:
    """Temporal scope of a model's input or output: window length in ticks
    and sampling resolution in ticks per sample.  Source models use a zero
    input window; all other windows are positive."""

    window: int
    resolution: int = 1

    def __post_init__(self):
        if self.window < 0:
            raise ValueError("scope window must be >= 0")
        if self.resolution < 1:
            raise ValueError("scope resolution must be >= 1")
        if self.window % self.resolution != 0:
            raise ValueError("scope resolution must divide window")


@dataclass(frozen=True)
class ModelSpec:
    """One model of a flow: a registered function plus its parameter space,
    input/output variables, temporal scopes, and step shift."""

    id: str
    function_ref: str
    params: tuple[ParameterSpec, ...] = ()
    inputs: tuple[VariableSpec, ...] = ()
    outputs: tuple[VariableSpec, ...] = ()
    input_scope: ScopeDescriptor = ScopeDescriptor(0)
    output_scope: ScopeDescriptor = ScopeDescriptor(1)
    shift: int = 1
    stateful: bool = False

    def __post_init__(self):
        if not self.id:
            raise ValueError("model id must be non-empty")
        for group, label in ((self.inputs, "input"), (self.outputs, "output")):
            names = [v.name for v in group]
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {label} variable name in model {self.id}")
        pnames = [p.name for p in self.params]
        if len(set(pnames)) != len(pnames):
            raise ValueError(f"duplicate parameter name in model {self.id}")
        if not self.outputs:
            raise ValueError(f"model {self.id} declares no outputs")
        if self.output_scope.window < 1:
            raise ValueError(f"model {self.id} needs an output window >= 1")
        if self.inputs and self.input_scope.window < 1:
            raise ValueError(f"model {self.id} has inputs but a zero input window")
        if not self.inputs and self.input_scope.window != 0:
            raise ValueError(f"source model {self.id} must have input window 0")
        if self.shift < 1:
            raise ValueError(f"model {self.id} needs shift >= 1")

    @property
    def is_source(self) -> bool:
        return not self.inputs

    def input_var(self, name: str) -> Optional[VariableSpec]:
        return next((v for v in self.inputs if v.name == name), None)

    def output_var(self, name: str) -> Optional[VariableSpec]:
        return next((v for v in self.outputs if v.name == name), None)


@dataclass(frozen=True)
class FlowEdge:
    """A data dependency: one producer output variable feeds one consumer
    input variable, displaced backwards in time by ``lag`` ticks.

    ``initial_value`` fills the part of a lagged input window that falls
    before tick 0; it is required whenever ``lag >= 1``.
    """

    from_node: str
    output_var: str
    to_node: str
    input_var: str
    lag: int = 0
    initial_value: Optional[float] = None

    def __post_init__(self):
        if self.lag < 0:
            raise ValueError("edge lag must be >= 0")

    def label(self) -> str:
        return (
            f"{self.from_node}.{self.output_var}->"
            f"{self.to_node}.{self.input_var}(lag={self.lag})"
        )


@dataclass(frozen=True)
class FlowGraph:
    """Node-labeled directed workflow graph: nodes carry ModelSpecs, edges
    map output variables to input variables with a temporal lag."""

    name: str
    nodes: Mapping[str, ModelSpec]
    edges: tuple[FlowEdge, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        for mid, model in self.nodes.items():
            if mid != model.id:
                raise ValueError(f"node key {mid!r} != model id {model.id!r}")

    def incoming(self, model_id: str) -> list[FlowEdge]:
        return [e for e in self.edges if e.to_node == model_id]

    def outgoing(self, model_id: str) -> list[FlowEdge]:
        return [e for e in self.edges if e.from_node == model_id]

    def is_source(self, model_id: str) -> bool:
        return self.nodes[model_id].is_source


@dataclass(frozen=True, eq=False)
class SeriesWindow:
    """An ordered run of samples for one variable over [t_start, t_end).

    Sample ``j`` covers ticks ``[t_start + j*resolution,
    t_start + (j+1)*resolution)``.  Values are a read-only float array of
    shape (n,) for scalar variables or (n, dim) for vector variables.
    """

    variable: str
    t_start: int
    t_end: int
    resolution: int
    values: np.ndarray

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ValueError("series window requires t_start < t_end")
        if self.resolution < 1:
            raise ValueError("series resolution must be >= 1")
        span = self.t_end - self.t_start
        if span % self.resolution != 0:
            raise ValueError("series resolution must divide the window length")
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim not in (1, 2):
            raise ValueError("series values must be 1-D (scalar) or 2-D (vector)")
        if arr.shape[0] != span // self.resolution:
            raise ValueError(
                f"series {self.variable!r} expects {span // self.resolution} "
                f"samples over [{self.t_start},{self.t_end}) at resolution "
                f"{self.resolution}, got {arr.shape[0]}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    @property
    def window(self) -> Window:
        return (self.t_start, self.t_end)

    def tick_values(self) -> np.ndarray:
        """Expand to one value per tick (sample-and-hold)."""
        return np.repeat(self.values, self.resolution, axis=0)

    def as_dict(self) -> dict:
        return {
            "variable": self.variable,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "resolution": self.resolution,
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SeriesWindow":
        return cls(
            variable=d["variable"],
            t_start=d["t_start"],
            t_end=d["t_end"],
            resolution=d["resolution"],
            values=np.asarray(d["values"], dtype=float),
        )

    def __eq__(self, other):
        if not isinstance(other, SeriesWindow):
            return NotImplemented
        return (
            self.variable == other.variable
            and self.t_start == other.t_start
            and self.t_end == other.t_end
            and self.resolution == other.resolution
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def __repr__(self):
        return (
            f"SeriesWindow({self.variable!r}, [{self.t_start},{self.t_end}), "
            f"res={self.resolution}, n={self.n_samples})"
        )


# ---------------------------------------------------------------------------
# Window algebra


def step_windows(
    model: ModelSpec, step: int, is_source: bool
) -> tuple[Optional[Window], Window]:
    """Input and output windows of execution step ``step``.

    Source steps read nothing and write ``[s*shift, s*shift + w_out)``;
    all other steps additionally read ``[s*shift, s*shift + w_in)``.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    lo = step * model.shift
    out = (lo, lo + model.output_scope.window)
    if is_source:
        return None, out
    return (lo, lo + model.input_scope.window), out


def _latest_cover(t: int, delta: int, w_out: int, max_step: int) -> Optional[int]:
    """Latest step <= max_step whose output window covers tick t, or None.

    Windows start every ``delta`` ticks, so the only candidate is the last
    window starting at or before t (earlier ones end no later).
    """
    if max_step < 0 or t < 0:
        return None
    k = min(t // delta, max_step)
    return k if t - k * delta < w_out else None


# ---------------------------------------------------------------------------
# Flow validation


@dataclass(frozen=True)
class Violation:
    """One broken flow invariant, anchored to the node or edge at fault."""

    code: str
    subject: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.subject}: {self.message}"


def _zero_lag_cycles(flow: FlowGraph) -> list[list[str]]:
    """Cycles of the zero-lag edge subgraph (each makes unrolling impossible)."""
    adj: dict[str, set[str]] = {mid: set() for mid in flow.nodes}
    for e in flow.edges:
        if e.lag == 0 and e.from_node in adj and e.to_node in adj:
            adj[e.from_node].add(e.to_node)
    cycles = []
    color: dict[str, int] = {}
    stack: list[str] = []

    def visit(u: str):
        color[u] = 1
        stack.append(u)
        for v in sorted(adj[u]):
            if color.get(v, 0) == 1:
                cycles.append(stack[stack.index(v):] + [v])
            elif color.get(v, 0) == 0:
                visit(v)
        stack.pop()
        color[u] = 2

    for node in sorted(adj):
        if color.get(node, 0) == 0:
            visit(node)
    return cycles


def _structural_violations(flow: FlowGraph, registry=None) -> list[Violation]:
    out: list[Violation] = []
    for mid, model in flow.nodes.items():
        if registry is not None and not registry.has(model.function_ref):
            out.append(
                Violation(
                    "unknown-function",
                    mid,
                    f"function_ref {model.function_ref!r} is not registered",
                )
            )
    feeds: dict[tuple[str, str], int] = {}
    for e in flow.edges:
        src = flow.nodes.get(e.from_node)
        dst = flow.nodes.get(e.to_node)
        if src is None:
            out.append(Violation("unknown-node", e.label(), "from_node does not exist"))
        if dst is None:
            out.append(Violation("unknown-node", e.label(), "to_node does not exist"))
        if src is not None:
            ov = src.output_var(e.output_var)
            if ov is None:
                out.append(
                    Violation(
                        "unknown-variable",
                        e.label(),
                        f"{e.from_node} has no output {e.output_var!r}",
                    )
                )
        if dst is not None:
            iv = dst.input_var(e.input_var)
            if iv is None:
                out.append(
                    Violation(
                        "unknown-variable",
                        e.label(),
                        f"{e.to_node} has no input {e.input_var!r}",
                    )
                )
        if src is not None and dst is not None:
            ov = src.output_var(e.output_var)
            iv = dst.input_var(e.input_var)
            if ov is not None and iv is not None and ov.kind_label != iv.kind_label:
                out.append(
                    Violation(
                        "kind-mismatch",
                        e.label(),
                        f"{ov.kind_label} output feeds {iv.kind_label} input",
                    )
                )
        if dst is not None:
            feeds[(e.to_node, e.input_var)] = feeds.get((e.to_node, e.input_var), 0) + 1
        if e.lag >= 1 and e.initial_value is None:
            out.append(
                Violation(
                    "missing-initial",
                    e.label(),
                    "lagged edges need an initial_value to seed ticks before 0",
                )
            )
    for mid, model in flow.nodes.items():
        for var in model.inputs:
            n = feeds.get((mid, var.name), 0)
            if n == 0:
                out.append(
                    Violation("unfed-input", mid, f"input {var.name!r} has no feeding edge")
                )
            elif n > 1:
                out.append(
                    Violation(
                        "duplicate-input-feed",
                        mid,
                        f"input {var.name!r} is fed by {n} edges",
                    )
                )
    for cycle in _zero_lag_cycles(flow):
        out.append(
            Violation(
                "zero-lag-cycle",
                "->".join(cycle),
                "every workflow cycle needs at least one edge with lag >= 1",
            )
        )
    return out


# ---------------------------------------------------------------------------
# Time-unrolling (shared by validation and plan compilation)


@dataclass(frozen=True)
class Contribution:
    """The slice of one producer task's output actually read by a consumer."""

    producer: str
    step: int
    window: Window


@dataclass(frozen=True)
class TaskRequirement:
    """One edge's data requirement for a consumer task: the lag-shifted
    window, the sub-zero part (seeded from the edge's initial value), and
    the producer tasks owning each covered tick."""

    edge: FlowEdge
    window: Window
    initial_window: Optional[Window]
    contributions: tuple[Contribution, ...]


@dataclass(frozen=True)
class UnrolledTask:
    model_id: str
    step: int
    in_window: Optional[Window]
    out_window: Window
    requirements: tuple[TaskRequirement, ...]

    @property
    def key(self) -> TaskKey:
        return (self.model_id, self.step)


@dataclass(frozen=True)
class Unrolled:
    """The time-unrolled execution graph of a flow over a horizon."""

    horizon: int
    tasks: Mapping[TaskKey, UnrolledTask]
    deps: Mapping[TaskKey, frozenset[TaskKey]]
    order: tuple[TaskKey, ...]


_TASK_CAP = 200_000


def unroll_tasks(flow: FlowGraph, horizon: int, *, collect=None) -> Unrolled:
    """Unroll a flow into per-step tasks over ``[0, horizon)``.

    Every (model, step) whose output window fits inside the horizon is
    scheduled; producer steps past the horizon are added only when a
    scheduled consumer needs ticks nothing else covers.  A consumer tick is
    then attributed to the latest scheduled producer window covering it
    (later-produced data wins, matching input alignment), and the task's
    dependencies are exactly the attributed producer tasks.

    With ``collect`` (a list), problems are appended as Violations and the
    offending requirement is skipped; otherwise the first problem raises
    UnsatisfiableInput.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")

    def issue(code: str, subject: str, message: str):
        if collect is None:
            raise UnsatisfiableInput(f"{subject}: {message}")
        collect.append(Violation(code, subject, message))

    incoming = {mid: flow.incoming(mid) for mid in flow.nodes}
    base_last: dict[str, int] = {}
    extras: dict[str, list[int]] = {mid: [] for mid in flow.nodes}
    for mid, m in flow.nodes.items():
        w_out, delta = m.output_scope.window, m.shift
        base_last[mid] = (horizon - w_out) // delta if w_out <= horizon else -1

    # Phase 1: fixpoint over the scheduled task set.  Scan each task's
    # required ticks; any tick no scheduled producer window covers forces an
    # extra producer step (its unbounded owner, floor(t/delta)).
    pending: deque[TaskKey] = deque()
    seen: set[TaskKey] = set()
    for mid in sorted(flow.nodes):
        for s in range(base_last[mid] + 1):
            pending.append((mid, s))
            seen.add((mid, s))

    def required_window(model: ModelSpec, edge: FlowEdge, step: int) -> Window:
        lo = step * model.shift - edge.lag
        return (lo, lo + model.input_scope.window)

    while pending:
        if len(seen) > _TASK_CAP:
            issue(
                "unbounded-lookahead",
                flow.name,
                "unrolling did not close; scopes/lags force unbounded lookahead",
            )
            break
        mid, s = pending.popleft()
        model = flow.nodes[mid]
        if model.is_source:
            continue
        for edge in incoming[mid]:
            if edge.from_node not in flow.nodes:
                continue
            prod = flow.nodes[edge.from_node]
            w_out, delta = prod.output_scope.window, prod.shift
            lo, hi = required_window(model, edge, s)
            if lo < 0 and edge.initial_value is None:
                issue(
                    "missing-initial",
                    edge.label(),
                    f"step {s} needs ticks [{lo},0) before the start of time",
                )
            ex = extras[edge.from_node]
            for t in range(max(lo, 0), hi):
                if _latest_cover(t, delta, w_out, base_last[edge.from_node]) is not None:
                    continue
                if any(k * delta <= t < k * delta + w_out for k in ex):
                    continue
                k = t // delta
                if t - k * delta >= w_out:
                    issue(
                        "coverage-gap",
                        edge.label(),
                        f"no output window of {edge.from_node} ever covers tick {t} "
                        f"(needed by {mid} step {s})",
                    )
                    continue
                ex.append(k)
                key = (edge.from_node, k)
                if key not in seen:
                    seen.add(key)
                    pending.append(key)

    # Phase 2: attribute ticks against the final scheduled set and build the
    # dependency graph.
    tasks: dict[TaskKey, UnrolledTask] = {}
    deps: dict[TaskKey, set[TaskKey]] = {}
    for mid, s in sorted(seen):
        model = flow.nodes[mid]
        in_w, out_w = step_windows(model, s, model.is_source)
        reqs: list[TaskRequirement] = []
        task_deps: set[TaskKey] = set()
        if not model.is_source:
            for edge in incoming[mid]:
                if edge.from_node not in flow.nodes:
                    continue
                prod = flow.nodes[edge.from_node]
                w_out, delta = prod.output_scope.window, prod.shift
                ex = sorted(extras[edge.from_node])
                lo, hi = required_window(model, edge, s)
                initial_w = (lo, min(hi, 0)) if lo < 0 else None
                owners: list[tuple[int, int]] = []  # (tick, producer step)
                for t in range(max(lo, 0), hi):
                    k = _latest_cover(t, delta, w_out, base_last[edge.from_node])
                    for ke in ex:
                        if ke * delta <= t < ke * delta + w_out and (k is None or ke > k):
                            k = ke
                    if k is None:
                        continue  # already reported in phase 1
                    owners.append((t, k))
                contribs: list[Contribution] = []
                for t, k in owners:
                    if contribs and contribs[-1].step == k and contribs[-1].window[1] == t:
                        prev = contribs.pop()
                        contribs.append(
                            Contribution(prev.producer, k, (prev.window[0], t + 1))
                        )
                    else:
                        contribs.append(Contribution(edge.from_node, k, (t, t + 1)))
                    task_deps.add((edge.from_node, k))
                reqs.append(
                    TaskRequirement(edge, (lo, hi), initial_w, tuple(contribs))
                )
        tasks[(mid, s)] = UnrolledTask(mid, s, in_w, out_w, tuple(reqs))
        deps[(mid, s)] = task_deps

    # Topological order (Kahn, deterministic tie-break by key).
    indeg = {k: 0 for k in tasks}
    fwd: dict[TaskKey, list[TaskKey]] = {k: [] for k in tasks}
    for k, ds in deps.items():
        for d in ds:
            indeg[k] += 1
            fwd[d].append(k)
    ready = sorted(k for k, n in indeg.items() if n == 0)
    order: list[TaskKey] = []
    import heapq

    heap = list(ready)
    heapq.heapify(heap)
    while heap:
        k = heapq.heappop(heap)
        order.append(k)
        for nxt in fwd[k]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, nxt)
    if len(order) != len(tasks):
        stuck = sorted(set(tasks) - set(order))
        issue(
            "cyclic-dependence",
            f"{stuck[0][0]}@{stuck[0][1]}",
            "unrolled task graph has a cycle; add lag on a feedback edge",
        )
    return Unrolled(
        horizon=horizon,
        tasks=tasks,
        deps={k: frozenset(v) for k, v in deps.items()},
        order=tuple(order),
    )


def _probe_horizon(flow: FlowGraph) -> int:
    """A horizon long enough to expose every periodic window-alignment
    pattern of the flow (a couple of shift least-common-multiples, capped)."""
    lcm = 1
    for m in flow.nodes.values():
        lcm = lcm * m.shift // math.gcd(lcm, m.shift)
        if lcm > 4096:
            lcm = 4096
            break
    span = max(
        (m.shift + m.output_scope.window + m.input_scope.window for m in flow.nodes.values()),
        default=1,
    )
    max_lag = max((e.lag for e in flow.edges), default=0)
    return 2 * lcm + span + max_lag


def validate_flow(flow: FlowGraph, registry=None) -> list[Violation]:
    """Check every flow invariant; an empty report means the flow is valid.

    On top of the structural checks (edge endpoints, variable kinds, single
    feeds, zero-lag cycles, lag seeding), a valid flow must be schedulable:
    a probe unrolling over a representative horizon must close without
    coverage gaps or cyclic dependence, so that plan compilation cannot fail
    later.
    """
    report = _structural_violations(flow, registry)
    if report:
        return report
    if flow.nodes:
        unroll_tasks(flow, _probe_horizon(flow), collect=report)
    # Deduplicate: the probe revisits the same edge once per step.
    unique: list[Violation] = []
    seen: set[tuple[str, str]] = set()
    for v in report:
        if (v.code, v.subject) not in seen:
            seen.add((v.code, v.subject))
            unique.append(v)
    return unique
