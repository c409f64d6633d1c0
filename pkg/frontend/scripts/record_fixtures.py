"""Record API fixtures for the explorer tests.

Builds a small ensemble with three maximal timelines -- the best-scoring
one, a near-duplicate sharing most nodes, and a node-disjoint alternative
-- saves it through the real store, and records the actual service
responses the explorer consumes.  Run from the frontend directory:

    python3 scripts/record_fixtures.py
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from ensembleflow.core import SeriesWindow
from ensembleflow.service import create_app
from ensembleflow.store import DataEdge, EnsembleGraph, SimulationInstance, save_run

OUT_DIR = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

EXTRACT_SCORE = {
    "criterion": {"terms": [{"model": "B", "variable": "x", "objective": "maximize"}]},
    "k": 2,
    "lambda": 0.0,
}
EXTRACT_DIVERSE = {**EXTRACT_SCORE, "lambda": 1.0}


def instance(iid, model, step, window, values, state_parent=None):
    lo, hi = window
    return SimulationInstance(
        id=iid,
        model_id=model,
        step=step,
        params=(("level", float(values[0])),),
        window=window,
        inputs_digest="",
        status="ok",
        state_parent=state_parent,
        outputs=(SeriesWindow("x", lo, hi, 1, np.asarray(values, dtype=float)),),
    )


def fixture_graph() -> EnsembleGraph:
    g = EnsembleGraph("run-explorer-fixture", {"flow_name": "fixture", "horizon": 4})
    g.add_instance(instance("a1", "A", 0, (0, 4), [1.0, 1.0, 1.0, 1.0]), [])
    g.add_instance(instance("a2", "A", 0, (0, 4), [2.0, 2.0, 2.0, 2.0]), [])
    g.add_instance(
        instance("b1", "B", 0, (0, 4), [10.0, 10.0, 10.0, 10.0]),
        [DataEdge("a1", "b1", "x", (0, 4))],
    )
    g.add_instance(
        instance("b1p", "B", 0, (0, 4), [9.0, 9.0, 9.0, 9.0]),
        [DataEdge("a1", "b1p", "x", (0, 4))],
    )
    g.add_instance(
        instance("b2", "B", 0, (0, 4), [5.0, 5.0, 5.0, 5.0]),
        [DataEdge("a2", "b2", "x", (0, 4))],
    )
    g.finalize("complete")
    return g


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as root:
        graph = fixture_graph()
        save_run(graph, Path(root) / graph.run_id)
        app = create_app(root, extraction_budget_s=60.0)
        with TestClient(app) as client:
            run_id = graph.run_id
            recorded = {
                "runs": client.get("/api/runs").json(),
                "graph": client.get(
                    f"/api/runs/{run_id}/graph", params={"page_size": 100}
                ).json(),
                "extract_lambda0": client.post(
                    f"/api/runs/{run_id}/timelines", json=EXTRACT_SCORE
                ).json(),
                "extract_lambda1": client.post(
                    f"/api/runs/{run_id}/timelines", json=EXTRACT_DIVERSE
                ).json(),
                "provenance_b1": client.get(
                    f"/api/runs/{run_id}/instances/b1/provenance"
                ).json(),
            }
            details = {}
            seen = set()
            for key in ("extract_lambda0", "extract_lambda1"):
                for t in recorded[key]["timelines"]:
                    if t["id"] not in seen:
                        seen.add(t["id"])
                        details[t["id"]] = client.get(
                            f"/api/runs/{run_id}/timelines/{t['id']}"
                        ).json()
            recorded["details"] = details
            recorded["requests"] = {
                "lambda0": EXTRACT_SCORE,
                "lambda1": EXTRACT_DIVERSE,
            }
        out = OUT_DIR / "explorer_fixture.json"
        out.write_text(json.dumps(recorded, indent=2, sort_keys=True))
        print(f"wrote {out}")
        sanity = [t["id"] for t in recorded["extract_lambda0"]["timelines"]]
        diverse = [t["id"] for t in recorded["extract_lambda1"]["timelines"]]
        print("lambda0 order:", sanity)
        print("lambda1 order:", diverse)
        if sanity[0] != diverse[0] or sanity[1] == diverse[1]:
            print("unexpected fixture shape", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
