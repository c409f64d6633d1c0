"""Extract, score, and diversify timelines: maximal, consistent,
causally-closed subsets of an ensemble graph.

A timeline holds at most one instance of each model covering any tick
(consistent), contains every data/state parent of its members (causally
closed), and cannot absorb any further instance together with its
provenance without breaking consistency (maximal).  Failed instances and
instances whose scenario branch was dropped never enter timelines.

``enumerate_timelines`` is the exact oracle for small graphs;
``extract_top_k`` is the production path: frontier/beam search over
scenario branches followed by maximal-marginal-relevance selection.  On
graphs at or below the oracle limit the frontier is exhaustive, so the
top-scoring extraction provably matches the oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import SeriesWindow, Window, windows_intersect
from .errors import (
    InconsistentInput,
    TooLarge,
    UnknownInstance,
    UnknownVariable,
)
from .store import STATUS_OK, EnsembleGraph
from .util import canonical_json, sha256_hex

ORACLE_LIMIT = 24


@dataclass(frozen=True)
class Timeline:
    """One plausible history: a node set with its preference score and the
    fraction of (tick, model) pairs it covers."""

    run_id: str
    node_ids: frozenset[str]
    score: float
    coverage: float

    @property
    def timeline_id(self) -> str:
        return "tl-" + sha256_hex(canonical_json([self.run_id, sorted(self.node_ids)]))[:12]


@dataclass(frozen=True)
class CriterionTerm:
    """One weighted preference: maximize/minimize the mean of a model output
    variable, or match it against a target profile (negative mean-squared
    deviation)."""

    model_id: str
    variable: str
    objective: str  # "maximize" | "minimize" | "match"
    target: Optional[SeriesWindow] = None
    weight: float = 1.0

    def __post_init__(self):
        if self.objective not in ("maximize", "minimize", "match"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.objective == "match" and self.target is None:
            raise ValueError("match terms need a target series")
        if not math.isfinite(self.weight):
            raise ValueError("term weight must be finite")


@dataclass(frozen=True)
class PreferenceCriterion:
    terms: tuple[CriterionTerm, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("criterion needs at least one term")


@dataclass(frozen=True)
class DiversityConfig:
    """Top-k extraction knobs: k results, score/diversity trade-off lambda
    (0 = pure score, 1 = pure diversity), and the beam width bounding the
    candidate pool on large graphs.  Similarity is Jaccard over node-id
    sets."""

    k: int = 3
    lam: float = 0.3
    beam_width: int = 64

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("lambda must be in [0, 1]")
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")


# ---------------------------------------------------------------------------
# Predicates


def _check_members(graph: EnsembleGraph, node_ids: Iterable[str]) -> frozenset[str]:
    ids = frozenset(node_ids)
    for i in ids:
        if i not in graph:
            raise UnknownInstance(i)
    return ids


def is_consistent(graph: EnsembleGraph, node_ids: Iterable[str]) -> bool:
    """At most one instance of each model covers any tick."""
    ids = _check_members(graph, node_ids)
    by_model: dict[str, list[Window]] = {}
    for i in ids:
        n = graph.node(i)
        by_model.setdefault(n.model_id, []).append(n.window)
    for windows in by_model.values():
        windows.sort()
        for a, b in zip(windows, windows[1:]):
            if a[1] > b[0]:
                return False
    return True


def is_causally_closed(graph: EnsembleGraph, node_ids: Iterable[str]) -> bool:
    """Every data/state parent of a member is also a member."""
    ids = _check_members(graph, node_ids)
    for i in ids:
        for e in graph.parents(i):
            if e.src not in ids:
                return False
    return True


def is_maximal(graph: EnsembleGraph, node_ids: Iterable[str]) -> bool:
    """No outside instance can be added (with its provenance) while staying
    consistent.  Requires a consistent, causally closed input set."""
    ids = _check_members(graph, node_ids)
    if not is_consistent(graph, ids) or not is_causally_closed(graph, ids):
        raise InconsistentInput("is_maximal needs a consistent, closed set")
    for v in graph.ok_node_ids():
        if v in ids:
            continue
        closure = graph.provenance_ids(v)
        if not closure <= set(graph.ok_node_ids()):
            continue  # provenance crosses failed/dropped nodes; never addable
        if is_consistent(graph, ids | closure):
            return False
    return True


# ---------------------------------------------------------------------------
# Exact enumeration (the oracle)


def enumerate_timelines(graph: EnsembleGraph, limit: int = ORACLE_LIMIT) -> list[frozenset[str]]:
    """All maximal consistent causally-closed node sets, exactly.

    Only instances with ok status participate.  Depth-first search in
    topological order; a node with no same-model window conflict anywhere
    in the graph is always taken when its parents are chosen, since
    skipping it could never unlock another choice.  Intended for graphs of
    at most ``limit`` nodes (raises TooLarge beyond).
    """
    if graph.node_count > limit:
        raise TooLarge(f"{graph.node_count} nodes exceed the oracle limit {limit}")
    ok = set(graph.ok_node_ids())
    order = [i for i in _topo_ids(graph) if i in ok]
    nodes = {i: graph.node(i) for i in order}
    conflicts: dict[str, set[str]] = {i: set() for i in order}
    for i in order:
        for j in order:
            if (
                i < j
                and nodes[i].model_id == nodes[j].model_id
                and windows_intersect(nodes[i].window, nodes[j].window)
            ):
                conflicts[i].add(j)
                conflicts[j].add(i)
    parents = {
        i: {e.src for e in graph.parents(i)} for i in order
    }
    results: set[frozenset[str]] = set()

    def consistent_with(chosen: set[str], v: str) -> bool:
        return not (conflicts[v] & chosen)

    def search(idx: int, chosen: set[str]):
        if idx == len(order):
            results.add(frozenset(chosen))
            return
        v = order[idx]
        addable = parents[v] <= chosen and consistent_with(chosen, v)
        if addable:
            chosen.add(v)
            search(idx + 1, chosen)
            chosen.remove(v)
            if conflicts[v]:
                search(idx + 1, chosen)
        else:
            search(idx + 1, chosen)

    search(0, set())
    closures = {v: graph.provenance_ids(v) for v in order}
    maximal: list[frozenset[str]] = []
    for cand in results:
        if _is_maximal_fast(cand, order, conflicts, closures, ok):
            maximal.append(cand)
    return sorted(set(maximal), key=lambda s: sorted(s))


def _is_maximal_fast(cand, order, conflicts, closures, ok) -> bool:
    cand_set = set(cand)
    for v in order:
        if v in cand_set:
            continue
        closure = closures[v]
        if not closure <= ok:
            continue  # provenance crosses failed/dropped nodes; never addable
        extended = cand_set | closure
        if all(not (conflicts[u] & (extended - {u})) for u in closure):
            return False
    return True


def _topo_ids(graph: EnsembleGraph) -> list[str]:
    indeg = {i: 0 for i in graph.node_ids()}
    fwd: dict[str, list[str]] = {i: [] for i in indeg}
    for i in indeg:
        for e in graph.parents(i):
            indeg[i] += 1
            fwd[e.src].append(i)
    import heapq

    heap = sorted(i for i, n in indeg.items() if n == 0)
    heapq.heapify(heap)
    out = []
    while heap:
        i = heapq.heappop(heap)
        out.append(i)
        for j in fwd[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, j)
    if len(out) != len(indeg):
        raise InconsistentInput("ensemble graph contains a cycle")
    return out


# ---------------------------------------------------------------------------
# Scoring and stitching


def timeline_series(
    graph: EnsembleGraph,
    node_ids: Iterable[str],
    model_id: str,
    variable: str,
) -> Optional[SeriesWindow]:
    """Stitch one model output variable over a timeline's covered ticks.

    Returns a tick-resolution series spanning the covered range; ticks no
    member instance covers are NaN gaps.  Later steps win on overlaps,
    matching input alignment.  None when the timeline holds no instance of
    the model.
    """
    ids = _check_members(graph, node_ids)
    if model_id not in graph.model_ids():
        raise UnknownVariable(f"model {model_id!r} has no instances in this run")
    if variable not in graph.output_variables(model_id):
        has_ok = any(
            graph.node(i).model_id == model_id for i in graph.ok_node_ids()
        )
        if has_ok:
            raise UnknownVariable(f"{model_id!r} has no output variable {variable!r}")
        return None  # every instance of the model failed: nothing observed
    members = sorted(
        (graph.node(i) for i in ids if graph.node(i).model_id == model_id),
        key=lambda n: (n.step, n.id),
    )
    members = [m for m in members if m.status == STATUS_OK and m.output(variable)]
    if not members:
        return None
    lo = min(m.window[0] for m in members)
    hi = max(m.window[1] for m in members)
    first = members[0].output(variable)
    dim = first.dim
    buf = np.full((hi - lo, dim) if dim > 1 else (hi - lo,), np.nan)
    for m in members:
        series = m.output(variable)
        ticks = series.tick_values()
        buf[m.window[0] - lo : m.window[1] - lo] = ticks
    return SeriesWindow(variable, lo, hi, 1, buf)


def score_timeline(
    graph: EnsembleGraph,
    node_ids: Iterable[str],
    criterion: PreferenceCriterion,
) -> float:
    """Deterministic weighted sum over criterion terms.

    maximize/minimize contribute the (+/-) mean of the stitched variable;
    match contributes the negative mean-squared deviation from the target
    over the ticks where both are defined.  Terms whose model never appears
    in the timeline contribute 0.
    """
    ids = frozenset(node_ids)
    total = 0.0
    for term in criterion.terms:
        stitched = timeline_series(graph, ids, term.model_id, term.variable)
        if stitched is None:
            continue
        values = np.asarray(stitched.values, dtype=float)
        defined = ~np.isnan(values) if values.ndim == 1 else ~np.isnan(values).any(axis=1)
        if term.objective in ("maximize", "minimize"):
            if not defined.any():
                continue
            mean = float(np.mean(values[defined]))
            total += term.weight * (mean if term.objective == "maximize" else -mean)
        else:
            target = term.target
            t_lo = max(stitched.t_start, target.t_start)
            t_hi = min(stitched.t_end, target.t_end)
            if t_lo >= t_hi:
                continue
            mine = values[t_lo - stitched.t_start : t_hi - stitched.t_start]
            theirs = target.tick_values()[t_lo - target.t_start : t_hi - target.t_start]
            both = ~np.isnan(mine) & ~np.isnan(theirs)
            if not np.asarray(both).any():
                continue
            msd = float(np.mean((mine[both] - theirs[both]) ** 2))
            total += term.weight * (-msd)
    return total


def coverage_of(graph: EnsembleGraph, node_ids: Iterable[str]) -> float:
    """Fraction of (tick, model) pairs over [0, horizon) that the timeline
    covers."""
    ids = _check_members(graph, node_ids)
    models = graph.model_ids()
    horizon = graph.horizon
    if not models or horizon <= 0:
        return 1.0
    covered = 0
    for m in models:
        ticks = np.zeros(horizon, dtype=bool)
        for i in ids:
            n = graph.node(i)
            if n.model_id == m:
                ticks[max(0, n.window[0]) : min(horizon, n.window[1])] = True
        covered += int(ticks.sum())
    return covered / (len(models) * horizon)


# ---------------------------------------------------------------------------
# Diverse top-k extraction


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 1.0


def mmr_select(
    candidates: Sequence[tuple[frozenset[str], float]],
    k: int,
    lam: float,
) -> list[int]:
    """Maximal-marginal-relevance order over (node set, score) candidates.

    Scores are min-max normalized over the pool.  The first pick is the
    best-scoring candidate; each next pick maximizes
    ``(1 - lam) * norm_score - lam * max_jaccard_to_selected``.  Ties break
    toward lower similarity, then lexicographic node ids, so selection is
    deterministic and pairwise similarity is monotone in lambda.
    """
    if not candidates:
        return []
    scores = [s for _, s in candidates]
    lo, hi = min(scores), max(scores)
    span = hi - lo
    norm = [1.0 if span == 0 else (s - lo) / span for s in scores]
    keys = [tuple(sorted(ns)) for ns, _ in candidates]
    remaining = list(range(len(candidates)))
    selected: list[int] = []
    while remaining and len(selected) < k:
        if not selected:
            best = max(remaining, key=lambda i: (norm[i], _neg(keys[i])))
        else:
            def mmr_key(i):
                sim = max(jaccard(candidates[i][0], candidates[j][0]) for j in selected)
                return ((1 - lam) * norm[i] - lam * sim, -sim, _neg(keys[i]))

            best = max(remaining, key=mmr_key)
        selected.append(best)
        remaining.remove(best)
    return selected


class _neg:
    """Reverse lexicographic comparison wrapper for deterministic max()."""

    __slots__ = ("key",)

    def __init__(self, key):
        self.key = key

    def __lt__(self, other):
        return self.key > other.key

    def __eq__(self, other):
        return self.key == other.key


def _cell_units(graph: EnsembleGraph) -> list[list[str]]:
    """Scenario expansion units in execution order.

    Nodes group into (model, step) cells; cells are ordered topologically
    over their instance dependencies with a time priority (earliest output
    window first), so frontiers advance like the run itself did and sources
    are not expanded ahead of the consumers that discriminate them.  If the
    cell graph is cyclic (exotic window/lag layouts), the leftover cells
    merge into one unit whose instances expand in node-topological order.
    """
    ok = set(graph.ok_node_ids())
    order = [i for i in _topo_ids(graph) if i in ok]
    nodes = {i: graph.node(i) for i in order}
    cells: dict[tuple[str, int], list[str]] = {}
    for i in order:
        cells.setdefault((nodes[i].model_id, nodes[i].step), []).append(i)
    cell_of = {i: (nodes[i].model_id, nodes[i].step) for i in order}
    succ: dict[tuple, set[tuple]] = {c: set() for c in cells}
    indeg: dict[tuple, int] = {c: 0 for c in cells}
    seen_edges = set()
    for i in order:
        for e in graph.parents(i):
            if e.src not in ok:
                continue
            a, b = cell_of[e.src], cell_of[i]
            if a != b and (a, b) not in seen_edges:
                seen_edges.add((a, b))
                succ[a].add(b)
                indeg[b] += 1
    import heapq

    window_lo = {c: min(nodes[i].window[0] for i in ids) for c, ids in cells.items()}
    heap = [(window_lo[c], c) for c, n in indeg.items() if n == 0]
    heapq.heapify(heap)
    units: list[list[str]] = []
    done = set()
    while heap:
        _, c = heapq.heappop(heap)
        done.add(c)
        units.append(cells[c])
        for nxt in succ[c]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, (window_lo[nxt], nxt))
    leftover = [i for i in order if cell_of[i] not in done]
    if leftover:
        units.append(leftover)
    return units


def _candidate_pool(
    graph: EnsembleGraph, beam_width: Optional[int], scorer
) -> list[frozenset[str]]:
    """Maximal timelines found by expanding per-(model, step) scenario
    frontiers in topological order.  With beam_width None the expansion is
    exhaustive; otherwise each frontier keeps the best partials by partial
    score (coverage breaks score ties so frozen dead-end branches do not
    starve chains that can still grow; node ids break exact ties)."""
    nodes = {i: graph.node(i) for i in graph.ok_node_ids()}
    parents = {i: {e.src for e in graph.parents(i)} for i in nodes}
    cache: dict[frozenset, float] = {}

    def cached_score(s: frozenset) -> float:
        if s not in cache:
            cache[s] = scorer(s)
        return cache[s]

    frontier: list[frozenset[str]] = [frozenset()]
    for unit in _cell_units(graph):
        nxt: set[frozenset[str]] = set(frontier)
        for v in unit:  # instance-topological within the unit
            for partial in list(nxt):
                if parents[v] <= partial and _consistent_add(graph, partial, nodes[v]):
                    nxt.add(partial | {v})
        frontier = sorted(nxt, key=lambda s: tuple(sorted(s)))
        if beam_width is not None and len(frontier) > beam_width:
            frontier.sort(
                key=lambda s: (-cached_score(s), -coverage_of(graph, s), tuple(sorted(s)))
            )
            frontier = frontier[:beam_width]
    finals = []
    for cand in frontier:
        try:
            if is_maximal(graph, cand):
                finals.append(cand)
        except InconsistentInput:  # cannot happen for frontier sets
            continue
    return sorted(set(finals), key=lambda s: tuple(sorted(s)))


def _consistent_add(graph: EnsembleGraph, partial: frozenset[str], node) -> bool:
    for i in partial:
        n = graph.node(i)
        if n.model_id == node.model_id and windows_intersect(n.window, node.window):
            return False
    return True


def extract_top_k(
    graph: EnsembleGraph,
    criterion: PreferenceCriterion,
    diversity: DiversityConfig,
    oracle_limit: int = ORACLE_LIMIT,
) -> list[Timeline]:
    """Up to k maximal timelines, scored by the criterion and diversified by
    maximal marginal relevance over node-set Jaccard similarity.

    Graphs at or below ``oracle_limit`` nodes are expanded exhaustively, so
    with lambda 0 the first result carries the best score any timeline can
    achieve; larger graphs are pruned to ``diversity.beam_width`` partials
    per frontier.  Returns fewer than k when fewer maximal timelines exist.
    """

    def scorer(node_set):
        return score_timeline(graph, node_set, criterion)

    beam = None if graph.node_count <= oracle_limit else diversity.beam_width
    pool = _candidate_pool(graph, beam, scorer)
    scored = [(cand, scorer(cand)) for cand in pool]
    picks = mmr_select(scored, diversity.k, diversity.lam)
    out = []
    for i in picks:
        cand, score = scored[i]
        out.append(
            Timeline(
                run_id=graph.run_id,
                node_ids=cand,
                score=score,
                coverage=coverage_of(graph, cand),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Export


def export_timeline(
    graph: EnsembleGraph,
    timeline: Timeline,
    criterion: PreferenceCriterion,
    diversity: Optional[DiversityConfig] = None,
) -> dict:
    """The saved artifact for one timeline: node ids, score, coverage, and
    every stitched per-variable series (gaps as nulls)."""
    series = {}
    for model_id in graph.model_ids():
        for variable in sorted(graph.output_variables(model_id)):
            stitched = timeline_series(graph, timeline.node_ids, model_id, variable)
            if stitched is None:
                continue
            values = [
                None if isinstance(v, float) and math.isnan(v) else v
                for v in _nested(stitched.values)
            ]
            series[f"{model_id}:{variable}"] = {
                "t_start": stitched.t_start,
                "t_end": stitched.t_end,
                "resolution": stitched.resolution,
                "values": values,
            }
    return {
        "run_id": timeline.run_id,
        "timeline_id": timeline.timeline_id,
        "criterion": criterion_to_dict(criterion),
        "diversity": (
            {"k": diversity.k, "lambda": diversity.lam, "beam_width": diversity.beam_width}
            if diversity
            else None
        ),
        "score": timeline.score,
        "coverage": timeline.coverage,
        "node_ids": sorted(timeline.node_ids),
    } | {"series": series}


def _nested(values: np.ndarray):
    if values.ndim == 1:
        return [float(v) for v in values]
    return [[None if math.isnan(x) else float(x) for x in row] for row in values]


def criterion_to_dict(criterion: PreferenceCriterion) -> dict:
    terms = []
    for t in criterion.terms:
        d = {
            "model": t.model_id,
            "variable": t.variable,
            "objective": t.objective,
            "weight": t.weight,
        }
        if t.target is not None:
            d["target"] = {
                "t_start": t.target.t_start,
                "resolution": t.target.resolution,
                "values": t.target.values.tolist(),
            }
        terms.append(d)
    return {"terms": terms}


def criterion_from_dict(d: dict) -> PreferenceCriterion:
    terms = []
    for raw in d.get("terms", []):
        target = None
        if raw.get("target") is not None:
            tv = raw["target"]
            values = np.asarray(tv["values"], dtype=float)
            res = tv.get("resolution", 1)
            t0 = tv.get("t_start", 0)
            target = SeriesWindow(
                raw["variable"], t0, t0 + len(values) * res, res, values
            )
        terms.append(
            CriterionTerm(
                model_id=raw["model"],
                variable=raw["variable"],
                objective=raw["objective"],
                target=target,
                weight=float(raw.get("weight", 1.0)),
            )
        )
    return PreferenceCriterion(tuple(terms))
