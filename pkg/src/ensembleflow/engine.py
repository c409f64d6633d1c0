"""Compile a flow into a time-unrolled execution plan and run it
continuously: per step, align upstream data, sample parameter vectors
within budget, execute model simulation instances on a work pool, and emit
instances into the ensemble store.

Execution is deterministic for a fixed RunConfig: sampling is a pure
function of per-model seeds and group identities, instance ids are content
derived, and results are committed in plan order regardless of how the
work pool schedules them, so two runs of the same config produce
byte-identical run logs.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product as iter_product
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .core import (
    FlowGraph,
    ModelSpec,
    SeriesWindow,
    TaskKey,
    Unrolled,
    UnrolledTask,
    Window,
    step_windows,
    unroll_tasks,
    validate_flow,
)
from .errors import (
    CoverageGap,
    EmptySample,
    InvalidFlow,
    ModelFailure,
)
from .registry import ModelRegistry
from .sampling import GroupKey, ParameterVector, SamplingPolicy, sample_instances
from .store import (
    STATUS_DROPPED,
    STATUS_FAILED,
    STATUS_OK,
    DataEdge,
    EnsembleGraph,
    RunStore,
    SimulationInstance,
)
from .util import canonical_json, derive_seed, sha256_hex

WORKERS_ENV = "ENSEMBLEFLOW_WORKERS"


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run: the flow, the horizon, one
    sampling policy per model, and the global seed from which per-model
    policy seeds are derived when not pinned explicitly."""

    flow: FlowGraph
    horizon: int
    policies: Mapping[str, SamplingPolicy] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        object.__setattr__(self, "policies", dict(self.policies))
        for mid in self.policies:
            if mid not in self.flow.nodes:
                raise ValueError(f"policy for unknown model {mid!r}")

    def policy_for(self, model_id: str) -> SamplingPolicy:
        pol = self.policies.get(model_id)
        if pol is None:
            pol = SamplingPolicy(seed=derive_seed(self.seed, "policy", model_id))
        return pol

    def as_dict(self) -> dict:
        from .flowspec import flow_to_dict  # local import: flowspec imports core only

        return {
            "flow": flow_to_dict(self.flow),
            "horizon": self.horizon,
            "seed": self.seed,
            "policies": {
                mid: {
                    "strategy": p.strategy,
                    "budget": p.budget,
                    "branch_limit": p.branch_limit,
                    "drop_quantile": p.drop_quantile,
                    "seed": p.seed,
                }
                for mid, p in sorted(self.policies.items())
            },
        }

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.as_dict()) + "|" + __version__)

    def run_id(self) -> str:
        """Content-addressed run id: hash of the config plus code version."""
        return "run-" + self.digest()[:16]


@dataclass(frozen=True)
class ExecutionPlan:
    """Time-unrolled task graph: ordered stages of (model, step) tasks whose
    dependency edges come from flow edges plus lags, augmented with
    state-threading edges for stateful models."""

    flow: FlowGraph
    horizon: int
    tasks: Mapping[TaskKey, UnrolledTask]
    deps: Mapping[TaskKey, frozenset[TaskKey]]
    order: tuple[TaskKey, ...]
    stages: tuple[tuple[TaskKey, ...], ...]


def compile_plan(flow: FlowGraph, horizon: int) -> ExecutionPlan:
    """Unroll a validated flow over [0, horizon) into an executable plan.

    Raises InvalidFlow when validation fails and UnsatisfiableInput when
    some task's input window cannot be covered by upstream output windows.
    """
    report = validate_flow(flow)
    if report:
        raise InvalidFlow(report)
    unrolled = unroll_tasks(flow, horizon)
    deps: dict[TaskKey, set[TaskKey]] = {k: set(v) for k, v in unrolled.deps.items()}
    for mid, s in unrolled.tasks:
        if flow.nodes[mid].stateful and s > 0 and (mid, s - 1) in unrolled.tasks:
            deps[(mid, s)].add((mid, s - 1))
    # Stage = longest dependency depth; tasks within a stage are mutually
    # independent and may run concurrently.
    level: dict[TaskKey, int] = {}
    order: list[TaskKey] = []
    import heapq

    indeg = {k: len(v) for k, v in deps.items()}
    fwd: dict[TaskKey, list[TaskKey]] = {k: [] for k in deps}
    for k, ds in deps.items():
        for d in ds:
            fwd[d].append(k)
    heap = sorted(k for k, n in indeg.items() if n == 0)
    heapq.heapify(heap)
    while heap:
        k = heapq.heappop(heap)
        order.append(k)
        level[k] = 1 + max((level[d] for d in deps[k]), default=-1)
        for nxt in fwd[k]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, nxt)
    assert len(order) == len(unrolled.tasks), "plan cycle should be caught earlier"
    n_stages = 1 + max(level.values(), default=-1)
    stages = tuple(
        tuple(sorted(k for k, lv in level.items() if lv == i)) for i in range(n_stages)
    )
    return ExecutionPlan(
        flow=flow,
        horizon=horizon,
        tasks=unrolled.tasks,
        deps={k: frozenset(v) for k, v in deps.items()},
        order=tuple(order),
        stages=stages,
    )


# ---------------------------------------------------------------------------
# Input alignment


def align_inputs(
    variable: str,
    window: Window,
    resolution: int,
    available: Sequence[SeriesWindow],
    dim: int = 1,
) -> SeriesWindow:
    """Fuse available series into one window at the required resolution.

    Later list entries win where windows overlap (the engine passes
    producer windows in step order, so later-produced data wins).
    Downsampling takes the arithmetic mean per target bucket; upsampling is
    sample-and-hold.  Raises CoverageGap when some tick stays unset.
    """
    lo, hi = window
    if lo >= hi:
        raise ValueError("alignment window must be non-empty")
    n_ticks = hi - lo
    if n_ticks % resolution != 0:
        raise ValueError("required resolution must divide the window length")
    buf = np.full((n_ticks, dim), np.nan)
    for win in available:
        a, b = max(lo, win.t_start), min(hi, win.t_end)
        if a >= b:
            continue
        ticks = win.tick_values()
        if ticks.ndim == 1:
            ticks = ticks[:, None]
        if ticks.shape[1] != dim:
            raise ValueError(
                f"series {win.variable!r} has dim {ticks.shape[1]}, expected {dim}"
            )
        buf[a - lo : b - lo] = ticks[a - win.t_start : b - win.t_start]
    missing = np.isnan(buf).any(axis=1)
    if missing.any():
        gaps = [int(t + lo) for t in np.flatnonzero(missing)]
        raise CoverageGap(
            f"input {variable!r} window [{lo},{hi}) is missing ticks "
            f"{gaps[:8]}{'...' if len(gaps) > 8 else ''}"
        )
    values = buf.reshape(n_ticks // resolution, resolution, dim).mean(axis=1)
    if dim == 1:
        values = values[:, 0]
    return SeriesWindow(variable, lo, hi, resolution, values)


# ---------------------------------------------------------------------------
# Instance execution


def execute_instance(
    model: ModelSpec,
    fn: Callable,
    step: int,
    params: ParameterVector,
    inputs: Mapping[str, SeriesWindow],
    state=None,
):
    """Run one model simulation instance: outputs covering exactly the
    step's output window at the output resolution, plus the new opaque
    state for stateful models (stateless models always yield None).

    Raises ModelFailure when the function raises or breaks its contract.
    """
    _, out_window = step_windows(model, step, model.is_source)
    res = model.output_scope.resolution
    try:
        raw_outputs, new_state = fn(params.as_dict(), dict(inputs), state, out_window, res)
    except Exception as exc:  # the instance is recorded as failed
        raise ModelFailure(f"{model.id}: {type(exc).__name__}: {exc}") from exc
    declared = {v.name: v for v in model.outputs}
    if set(raw_outputs) != set(declared):
        raise ModelFailure(
            f"{model.id}: outputs {sorted(raw_outputs)} do not match declared "
            f"{sorted(declared)}"
        )
    series = []
    for name in sorted(raw_outputs):
        spec = declared[name]
        value = raw_outputs[name]
        if isinstance(value, SeriesWindow):
            if value.window != out_window or value.resolution != res:
                raise ModelFailure(
                    f"{model.id}.{name}: window {value.window} at resolution "
                    f"{value.resolution} does not cover {out_window} at {res}"
                )
            win = value
        else:
            arr = np.asarray(value, dtype=float)
            try:
                win = SeriesWindow(name, out_window[0], out_window[1], res, arr)
            except ValueError as exc:
                raise ModelFailure(f"{model.id}.{name}: {exc}") from exc
        expected_dim = spec.dim if spec.kind == "vector" else 1
        if win.dim != expected_dim or (spec.kind == "scalar") != (win.values.ndim == 1):
            raise ModelFailure(
                f"{model.id}.{name}: expected {spec.kind_label} samples"
            )
        if not np.isfinite(win.values).all():
            raise ModelFailure(f"{model.id}.{name}: non-finite output values")
        series.append(win)
    return tuple(series), (new_state if model.stateful else None)


# ---------------------------------------------------------------------------
# Input groups


@dataclass(frozen=True)
class InputGroup:
    """One coherent choice of parent instances for a task: exactly one
    instance per upstream task slot, chosen so that the merged ancestries
    never contain two alternative instances of the same (model, step)."""

    choices: tuple[tuple[TaskKey, str], ...]
    state_parent: Optional[str]
    digest: str
    drop_score: Optional[float]

    def instance_for(self, task: TaskKey) -> str:
        for key, iid in self.choices:
            if key == task:
                return iid
        raise KeyError(task)


def _merge_ancestries(maps: Sequence[Mapping]) -> Optional[dict]:
    merged: dict = {}
    for m in maps:
        for cell, iid in m.items():
            if merged.setdefault(cell, iid) != iid:
                return None
    return merged


def build_input_groups(
    task: UnrolledTask,
    plan: ExecutionPlan,
    graph: EnsembleGraph,
    ancestry: Mapping[str, Mapping],
) -> list[InputGroup]:
    """All coherent parent combinations for a task, in deterministic order.

    One slot per upstream task (plus the same-model previous step for
    stateful models); combinations whose merged ancestries disagree on any
    (model, step) cell are cross-branch chimeras and are excluded.
    Candidates within a slot are ordered by their ancestry fingerprint, so
    different consumers enumerate shared scenario branches in the same
    order and budget truncation keeps coherent worlds alive.
    """
    model = plan.flow.nodes[task.model_id]
    slots: list[TaskKey] = sorted(plan.deps[task.key])
    state_key: Optional[TaskKey] = None
    if model.stateful and task.step > 0 and (task.model_id, task.step - 1) in plan.tasks:
        state_key = (task.model_id, task.step - 1)
        if state_key not in slots:
            slots = sorted(slots + [state_key])

    def fingerprint(iid: str):
        return tuple(sorted((m, s, a) for (m, s), a in ancestry[iid].items()))

    candidates: list[list[str]] = []
    for key in slots:
        ids = [
            i
            for i in graph.node_ids()
            if graph.node(i).model_id == key[0]
            and graph.node(i).step == key[1]
            and graph.status_of(i) != STATUS_FAILED
        ]
        ids.sort(key=lambda i: (fingerprint(i), i))
        candidates.append(ids)
    if any(not ids for ids in candidates):
        return []
    groups: list[InputGroup] = []
    for combo in iter_product(*candidates) if candidates else [()]:
        merged = _merge_ancestries([ancestry[iid] for iid in combo])
        if merged is None:
            continue
        state_parent = None
        if state_key is not None:
            state_parent = dict(zip(slots, combo))[state_key]
        choices = tuple(
            (key, iid) for key, iid in zip(slots, combo) if key != state_key or key in plan.deps[task.key]
        )
        digest = sha256_hex(
            canonical_json([list(combo), state_parent, task.model_id, task.step])
        )
        groups.append(
            InputGroup(
                choices=choices,
                state_parent=state_parent,
                digest=digest,
                drop_score=_group_drop_score(graph, combo),
            )
        )
    return groups


def _group_drop_score(graph: EnsembleGraph, instance_ids: Sequence[str]) -> Optional[float]:
    """Mean of the parents' declared drop-score outputs, if any declares one."""
    scores = []
    for iid in instance_ids:
        series = graph.node(iid).output("drop_score")
        if series is not None:
            scores.append(float(np.mean(series.values)))
    return float(np.mean(scores)) if scores else None


_SOURCE_GROUP = InputGroup(choices=(), state_parent=None, digest="source", drop_score=None)


# ---------------------------------------------------------------------------
# The run loop


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        return max(1, int(raw))
    return min(4, os.cpu_count() or 1)


def run_ensemble(
    config: RunConfig,
    store: RunStore,
    registry: ModelRegistry,
    *,
    overwrite: bool = False,
    workers: Optional[int] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> str:
    """Execute a config and persist the resulting ensemble graph.

    Returns the content-addressed run id.  On EmptySample/CoverageGap the
    partial graph stays persisted, marked incomplete, and the error
    propagates.
    """
    plan = compile_plan(config.flow, config.horizon)
    run_id = config.run_id()
    meta = {
        "flow_name": config.flow.name,
        "horizon": config.horizon,
        "seed": config.seed,
        "config_digest": config.digest(),
        "engine_version": __version__,
    }
    log = store.create(run_id, meta, overwrite=overwrite)
    n_workers = workers or default_workers()
    ancestry: dict[str, dict] = {}
    states: dict[str, object] = {}
    instances_by_task: dict[TaskKey, list[str]] = {}
    sampled_group_members: set[str] = set()

    def note(msg: str):
        if progress:
            progress(msg)

    try:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for stage_idx, stage in enumerate(plan.stages):
                note(f"stage {stage_idx + 1}/{len(plan.stages)}: {len(stage)} task(s)")
                jobs = []  # (task key, ordinal, group, pvec, future/result)
                for key in stage:
                    task = plan.tasks[key]
                    model = plan.flow.nodes[key[0]]
                    policy = config.policy_for(key[0])
                    if model.is_source:
                        groups = [_SOURCE_GROUP]
                    else:
                        groups = build_input_groups(task, plan, log.graph, ancestry)
                        for g in groups:
                            sampled_group_members.update(i for _, i in g.choices)
                    samples = sample_instances(model, key[1], groups, policy)
                    assert len(samples) <= policy.budget
                    for ordinal, (pvec, gidx) in enumerate(samples):
                        group = groups[gidx]
                        fut = pool.submit(
                            _run_one, plan, registry, task, model, pvec, group, log.graph, states
                        )
                        jobs.append((key, ordinal, group, pvec, fut))
                # Commit in deterministic plan order, not completion order.
                for key, ordinal, group, pvec, fut in jobs:
                    outputs, new_state, inputs_digest, error = fut.result()
                    task = plan.tasks[key]
                    iid = "i-" + sha256_hex(
                        canonical_json(
                            [run_id, key[0], key[1], group.digest, ordinal,
                             dict(pvec.assignments)]
                        )
                    )[:12]
                    status = STATUS_OK if error is None else STATUS_FAILED
                    inst = SimulationInstance(
                        id=iid,
                        model_id=key[0],
                        step=key[1],
                        params=pvec.assignments,
                        window=task.out_window,
                        inputs_digest=inputs_digest,
                        status=status,
                        state_parent=group.state_parent,
                        outputs=outputs if error is None else (),
                        error=error,
                    )
                    edges = _parent_edges(task, group, iid)
                    log.append_instance(inst, edges)
                    anc = _merge_ancestries(
                        [ancestry[i] for _, i in group.choices]
                        + ([ancestry[group.state_parent]] if group.state_parent else [])
                    )
                    anc[(key[0], key[1])] = iid
                    ancestry[iid] = anc
                    instances_by_task.setdefault(key, []).append(iid)
                    if new_state is not None:
                        states[iid] = new_state
    except (EmptySample, CoverageGap):
        log.finalize("incomplete")
        log.close()
        raise
    # Instances whose outputs were needed downstream but ended up with no
    # children were dropped by the sampling manager along the way.
    dep_targets: set[TaskKey] = set()
    for key, ds in plan.deps.items():
        dep_targets.update(ds)
    for key in sorted(instances_by_task):
        if key not in dep_targets:
            continue
        for iid in instances_by_task[key]:
            if log.graph.status_of(iid) == STATUS_OK and not log.graph.children(iid):
                log.append_mark(iid, STATUS_DROPPED)
    log.finalize("complete", trivial=log.graph.node_count == 0)
    log.close()
    return run_id


def _run_one(plan, registry, task, model, pvec, group, graph, states):
    """Align inputs and execute one instance; never raises (failures are
    reported in-band so the commit loop stays in control)."""
    try:
        inputs, inputs_digest = _aligned_inputs(plan, task, model, group, graph)
        state = states.get(group.state_parent) if group.state_parent else None
        fn = registry.resolve(model.function_ref)
        outputs, new_state = execute_instance(model, fn, task.step, pvec, inputs, state)
        return outputs, new_state, inputs_digest, None
    except CoverageGap:
        raise
    except ModelFailure as exc:
        return (), None, "", str(exc)


def _aligned_inputs(plan, task, model, group, graph):
    inputs: dict[str, SeriesWindow] = {}
    digest_parts = {}
    for req in task.requirements:
        edge = req.edge
        var = model.input_var(edge.input_var)
        dim = var.dim if var.kind == "vector" else 1
        available: list[SeriesWindow] = []
        if req.initial_window is not None:
            lo, hi = req.initial_window
            fill = np.full((hi - lo, dim) if dim > 1 else (hi - lo,), edge.initial_value)
            available.append(SeriesWindow(edge.input_var, lo, hi, 1, fill))
        for contrib in sorted(req.contributions, key=lambda c: c.step):
            iid = group.instance_for((contrib.producer, contrib.step))
            series = graph.node(iid).output(edge.output_var)
            if series is None:
                raise CoverageGap(
                    f"parent {iid} has no output {edge.output_var!r}"
                )
            available.append(series)
        aligned = align_inputs(
            edge.input_var, req.window, model.input_scope.resolution, available, dim
        )
        inputs[edge.input_var] = aligned
        digest_parts[edge.input_var] = aligned.as_dict()
    return inputs, sha256_hex(canonical_json(digest_parts))


def _parent_edges(task, group, new_id) -> list[DataEdge]:
    edges: list[DataEdge] = []
    for req in task.requirements:
        for contrib in sorted(req.contributions, key=lambda c: c.step):
            iid = group.instance_for((contrib.producer, contrib.step))
            edges.append(
                DataEdge(
                    src=iid,
                    dst=new_id,
                    variable=req.edge.output_var,
                    window=contrib.window,
                    kind="data",
                )
            )
    if group.state_parent is not None:
        edges.append(
            DataEdge(
                src=group.state_parent,
                dst=new_id,
                variable="__state__",
                window=task.out_window,
                kind="state",
            )
        )
    return edges


# ---------------------------------------------------------------------------
# Post-run checks (used by tests and the acceptance suite)


def verify_budgets(graph: EnsembleGraph, config: RunConfig) -> list[str]:
    """Instance counts per (model, step) must never exceed the budget."""
    counts: dict[TaskKey, int] = {}
    for inst in graph.nodes():
        counts[(inst.model_id, inst.step)] = counts.get((inst.model_id, inst.step), 0) + 1
    problems = []
    for (mid, step), n in sorted(counts.items()):
        budget = config.policy_for(mid).budget
        if n > budget:
            problems.append(f"{mid}@{step}: {n} instances exceed budget {budget}")
    return problems


def verify_input_coverage(graph: EnsembleGraph, flow: FlowGraph) -> list[str]:
    """Every non-source instance's parents must cover its entire input
    window (ticks before 0 are seeded from edge initial values)."""
    problems = []
    for inst in graph.nodes():
        model = flow.nodes.get(inst.model_id)
        if model is None or model.is_source or inst.status == STATUS_FAILED:
            continue
        by_var: dict[str, list[Window]] = {}
        for e in graph.parents(inst.id):
            if e.kind == "data":
                by_var.setdefault(e.variable, []).append(e.window)
        for edge in flow.incoming(inst.model_id):
            lo = inst.step * model.shift - edge.lag
            hi = lo + model.input_scope.window
            covered = np.zeros(hi - max(lo, 0), dtype=bool)
            for w in by_var.get(edge.output_var, []):
                a, b = max(w[0], max(lo, 0)), min(w[1], hi)
                if a < b:
                    covered[a - max(lo, 0) : b - max(lo, 0)] = True
            if not covered.all():
                problems.append(
                    f"{inst.id} ({inst.model_id}@{inst.step}) input "
                    f"{edge.input_var!r} has gaps"
                )
    return problems


def verify_state_lineage(graph: EnsembleGraph, flow: FlowGraph) -> list[str]:
    """Stateful instances at step s need exactly one same-model state parent
    at the branch's previous executed step."""
    problems = []
    for inst in graph.nodes():
        model = flow.nodes.get(inst.model_id)
        if model is None or not model.stateful or inst.step == 0:
            continue
        parent = inst.state_parent
        if parent is None:
            problems.append(f"{inst.id}: stateful instance without state parent")
            continue
        p = graph.node(parent)
        if p.model_id != inst.model_id or p.step != inst.step - 1:
            problems.append(f"{inst.id}: state parent {parent} is not step {inst.step - 1}")
    return problems
