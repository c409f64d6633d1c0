/** Replay recorded API fixtures through a fetch-compatible stub. */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import type {
  ExtractionResult,
  FetchLike,
  GraphPage,
  ProvenanceOut,
  RunSummary,
  TimelineDetail,
  TimelineRequest,
} from "../src/api.js";

export interface Recorded {
  runs: RunSummary[];
  graph: GraphPage;
  extract_lambda0: ExtractionResult;
  extract_lambda1: ExtractionResult;
  provenance_b1: ProvenanceOut;
  details: Record<string, TimelineDetail>;
  requests: { lambda0: TimelineRequest; lambda1: TimelineRequest };
}

export function loadFixture(): Recorded {
  const path = join(
    dirname(fileURLToPath(import.meta.url)),
    "fixtures",
    "explorer_fixture.json",
  );
  return JSON.parse(readFileSync(path, "utf-8")) as Recorded;
}

function ok(payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status: 200,
    headers: { "content-type": "application/json" },
  });
}

/** Serves exactly what was recorded; anything else is a 404. */
export function fixtureFetch(recorded: Recorded): FetchLike {
  const runId = recorded.graph.run_id;
  return async (url: string, init?: RequestInit): Promise<Response> => {
    const [path] = url.split("?");
    if (path === "/api/runs") return ok(recorded.runs);
    if (path === `/api/runs/${runId}/graph`) return ok(recorded.graph);
    if (path === `/api/runs/${runId}/timelines` && init?.method === "POST") {
      const body = JSON.parse(String(init.body)) as TimelineRequest;
      if (body.lambda === 0.0) return ok(recorded.extract_lambda0);
      if (body.lambda === 1.0) return ok(recorded.extract_lambda1);
      return new Response("unrecorded lambda", { status: 404 });
    }
    const detail = path?.match(new RegExp(`^/api/runs/${runId}/timelines/(.+)$`));
    if (detail && recorded.details[detail[1]!]) {
      return ok(recorded.details[detail[1]!]);
    }
    if (path === `/api/runs/${runId}/instances/b1/provenance`) {
      return ok(recorded.provenance_b1);
    }
    return new Response("not recorded", { status: 404 });
  };
}
