/**
 * Typed client for the ensembleflow HTTP API.
 *
 * Every interface mirrors the service's published schema (see
 * /openapi.json on a running server).  The client never reshapes values:
 * what the API returns is what callers see, so anything rendered can be
 * traced back to a response body.
 */

export interface RunSummary {
  run_id: string;
  flow_name: string;
  horizon: number;
  node_count: number;
  edge_count: number;
  status: "running" | "complete" | "incomplete";
  trivial: boolean;
  created_at: number;
}

export interface GraphNode {
  id: string;
  model: string;
  step: number;
  window: [number, number];
  status: string;
  params: Record<string, unknown>;
  state_parent: string | null;
  output_variables: string[];
}

export interface GraphEdge {
  from: string;
  to: string;
  variable: string;
  window: [number, number];
  edge_kind: "data" | "state";
}

export interface GraphPage {
  run_id: string;
  page: number;
  page_size: number;
  total_nodes: number;
  total_pages: number;
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface MatchTarget {
  t_start: number;
  resolution: number;
  values: number[];
}

export interface CriterionTerm {
  model: string;
  variable: string;
  objective: "maximize" | "minimize" | "match";
  target?: MatchTarget | null;
  weight: number;
}

export interface TimelineRequest {
  criterion: { terms: CriterionTerm[] };
  k: number;
  lambda: number;
  beam_width?: number;
}

export interface TimelineSummary {
  id: string;
  score: number;
  coverage: number;
  node_count: number;
}

export interface ExtractionResult {
  status: "complete" | "computing";
  request_id: string;
  timelines: TimelineSummary[];
}

export interface SeriesOut {
  model: string;
  variable: string;
  t_start: number;
  resolution: number;
  values: (number | null)[];
}

export interface TimelineDetail {
  id: string;
  run_id: string;
  score: number;
  coverage: number;
  node_ids: string[];
  series: SeriesOut[];
}

export interface ProvenanceOut {
  root: string;
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface ExportResult {
  export_id: string;
  path: string;
}

export interface GraphFilter {
  models?: string[];
  stepMin?: number;
  stepMax?: number;
  page?: number;
  pageSize?: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private fetchFn: FetchLike = (...args) => fetch(...args),
    private base = "",
  ) {}

  private async json<T>(url: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + url, init);
    if (!resp.ok && resp.status !== 202) {
      throw new ApiError(resp.status, `${resp.status} ${await resp.text()}`);
    }
    return (await resp.json()) as T;
  }

  listRuns(): Promise<RunSummary[]> {
    return this.json("/api/runs");
  }

  run(runId: string): Promise<RunSummary> {
    return this.json(`/api/runs/${runId}`);
  }

  graph(runId: string, filter: GraphFilter = {}): Promise<GraphPage> {
    const params = new URLSearchParams();
    for (const m of filter.models ?? []) params.append("models", m);
    if (filter.stepMin !== undefined) params.set("step_min", String(filter.stepMin));
    if (filter.stepMax !== undefined) params.set("step_max", String(filter.stepMax));
    params.set("page", String(filter.page ?? 1));
    params.set("page_size", String(filter.pageSize ?? 2000));
    return this.json(`/api/runs/${runId}/graph?${params.toString()}`);
  }

  /** Extraction may answer 202 while computing; poll until complete. */
  async extract(
    runId: string,
    request: TimelineRequest,
    pollMs = 500,
    maxPolls = 240,
  ): Promise<ExtractionResult> {
    for (let attempt = 0; attempt <= maxPolls; attempt++) {
      const result = await this.json<ExtractionResult>(
        `/api/runs/${runId}/timelines`,
        {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(request),
        },
      );
      if (result.status === "complete") return result;
      await new Promise((r) => setTimeout(r, pollMs));
    }
    throw new ApiError(202, "extraction did not finish in time");
  }

  timeline(runId: string, timelineId: string, maxPoints = 2000): Promise<TimelineDetail> {
    return this.json(
      `/api/runs/${runId}/timelines/${timelineId}?max_points=${maxPoints}`,
    );
  }

  provenance(runId: string, instanceId: string): Promise<ProvenanceOut> {
    return this.json(`/api/runs/${runId}/instances/${instanceId}/provenance`);
  }

  exportTimeline(runId: string, timelineId: string): Promise<ExportResult> {
    return this.json(`/api/runs/${runId}/timelines/${timelineId}/export`, {
      method: "POST",
    });
  }
}
