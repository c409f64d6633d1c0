"""Shared fixtures: synthetic ensemble graphs, mini model registries, and
one session-scoped demo run reused by engine/service/acceptance tests."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from ensembleflow import scenario
from ensembleflow.core import SeriesWindow
from ensembleflow.engine import run_ensemble
from ensembleflow.store import EnsembleGraph, RunStore, SimulationInstance, DataEdge


def make_instance(
    iid: str,
    model: str,
    step: int,
    window,
    values=None,
    status: str = "ok",
    state_parent=None,
    variable: str = "x",
    params=(),
):
    lo, hi = window
    outputs = ()
    if status == "ok":
        if values is None:
            values = np.zeros(hi - lo)
        outputs = (SeriesWindow(variable, lo, hi, 1, np.asarray(values, dtype=float)),)
    return SimulationInstance(
        id=iid,
        model_id=model,
        step=step,
        params=tuple(params),
        window=(lo, hi),
        inputs_digest="",
        status=status,
        state_parent=state_parent,
        outputs=outputs,
    )


def two_branch_graph() -> EnsembleGraph:
    """Model A branches a1/a2 over the same window; model B children b1(a1),
    b2(a2).  Exactly two maximal timelines exist: {a1,b1} and {a2,b2}."""
    g = EnsembleGraph("run-fixture")
    g.add_instance(make_instance("a1", "A", 0, (0, 4), values=[1, 1, 1, 1]), [])
    g.add_instance(make_instance("a2", "A", 0, (0, 4), values=[2, 2, 2, 2]), [])
    g.add_instance(
        make_instance("b1", "B", 0, (0, 4), values=[10, 10, 10, 10]),
        [DataEdge("a1", "b1", "x", (0, 4))],
    )
    g.add_instance(
        make_instance("b2", "B", 0, (0, 4), values=[20, 20, 20, 20]),
        [DataEdge("a2", "b2", "x", (0, 4))],
    )
    return g


def random_ensemble_graph(rng: np.random.Generator, max_nodes: int = 24) -> EnsembleGraph:
    """Ensemble-shaped random graph: a chain of models, per-(model, step)
    alternative instances, each non-source instance wired to one parent per
    upstream model and (sometimes) a same-model state parent."""
    while True:
        n_models = int(rng.integers(1, 5))
        n_steps = int(rng.integers(1, 4))
        alts = [
            [int(rng.integers(1, 4)) for _ in range(n_steps)] for _ in range(n_models)
        ]
        total = sum(sum(a) for a in alts)
        if total <= max_nodes:
            break
    width = 4
    g = EnsembleGraph(f"run-random-{rng.integers(1 << 30)}")
    ids: dict[tuple[int, int], list[str]] = {}
    counter = itertools.count()
    for step in range(n_steps):
        for m in range(n_models):
            cell: list[str] = []
            for a in range(alts[m][step]):
                iid = f"n{next(counter):03d}-m{m}s{step}a{a}"
                window = (step * width, (step + 1) * width)
                values = rng.normal(size=width)
                edges = []
                state_parent = None
                if m > 0:
                    parent = str(rng.choice(ids[(m - 1, step)]))
                    edges.append(DataEdge(parent, iid, "x", window))
                if step > 0 and rng.random() < 0.5:
                    state_parent = str(rng.choice(ids[(m, step - 1)]))
                    edges.append(
                        DataEdge(state_parent, iid, "__state__", window, kind="state")
                    )
                status = "ok" if rng.random() > 0.08 else "failed"
                g.add_instance(
                    make_instance(
                        iid,
                        f"m{m}",
                        step,
                        window,
                        values=values,
                        status=status,
                        state_parent=state_parent,
                    ),
                    edges,
                )
                cell.append(iid)
            ids[(m, step)] = cell
    return g


def brute_force_timelines(g: EnsembleGraph) -> list[frozenset]:
    """All maximal consistent causally-closed sets by checking every subset
    of the ok nodes.  Only usable on tiny graphs."""
    from ensembleflow.timeline import is_causally_closed, is_consistent

    ok = sorted(g.ok_node_ids())
    assert len(ok) <= 16, "brute force oracle limited to 16 ok nodes"
    candidates = []
    for mask in range(1 << len(ok)):
        subset = frozenset(ok[i] for i in range(len(ok)) if mask >> i & 1)
        if is_consistent(g, subset) and is_causally_closed(g, subset):
            candidates.append(subset)
    maximal = []
    for s in candidates:
        if not any(s < t for t in candidates):
            maximal.append(s)
    # "maximal" per the operational predicate: no single node (with its
    # provenance) can be added while staying consistent.
    from ensembleflow.timeline import is_maximal

    return sorted(
        (s for s in candidates if is_maximal(g, s)), key=lambda s: sorted(s)
    )


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """One demo-scenario run shared by read-only tests."""
    root = tmp_path_factory.mktemp("demo-store")
    config = scenario.demo_config()
    store = RunStore(root)
    run_id = run_ensemble(config, store, scenario.build_registry())
    return {"store_root": root, "store": store, "run_id": run_id, "config": config}
