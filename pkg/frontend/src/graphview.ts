/**
 * View-model for the provenance DAG panel: positions, colors, and the
 * highlight classes derived from timeline selections and provenance
 * queries.  Pure data in, pure data out; rendering stays in app.ts.
 */

import type { GraphNode, GraphPage, ProvenanceOut, TimelineDetail } from "./api.js";
import { GraphLayout, drawableEdges, edgePath, layoutGraph } from "./layout.js";

export const MODEL_COLORS = [
  "#3b82f6",
  "#ef4444",
  "#10b981",
  "#f59e0b",
  "#8b5cf6",
  "#14b8a6",
  "#f472b6",
  "#64748b",
];

export interface NodeView {
  node: GraphNode;
  x: number;
  y: number;
  color: string;
  classes: string[];
}

export interface EdgeView {
  path: string;
  kind: "data" | "state";
  dimmed: boolean;
}

export interface GraphView {
  width: number;
  height: number;
  nodes: NodeView[];
  edges: EdgeView[];
  modelColor: Map<string, string>;
}

/** The node ids a selected timeline highlights: exactly the API's set. */
export function timelineHighlight(detail: TimelineDetail): Set<string> {
  return new Set(detail.node_ids);
}

/** The node ids a provenance response highlights: exactly the API's set. */
export function provenanceHighlight(prov: ProvenanceOut): Set<string> {
  return new Set(prov.nodes.map((n) => n.id));
}

export function buildGraphView(
  page: GraphPage,
  timelineNodes: Set<string>,
  provenanceNodes: Set<string>,
  highlighted?: string,
): GraphView {
  const layout: GraphLayout = layoutGraph(page.nodes);
  const models = [...layout.laneOf.keys()].sort();
  const modelColor = new Map(
    models.map((m, i) => [m, MODEL_COLORS[i % MODEL_COLORS.length]!]),
  );
  const anyHighlight = timelineNodes.size > 0 || provenanceNodes.size > 0;
  const nodes: NodeView[] = page.nodes.map((n) => {
    const pos = layout.positions.get(n.id)!;
    const classes: string[] = [`status-${n.status}`];
    if (timelineNodes.has(n.id)) classes.push("in-timeline");
    if (provenanceNodes.has(n.id)) classes.push("in-provenance");
    if (anyHighlight && !timelineNodes.has(n.id) && !provenanceNodes.has(n.id)) {
      classes.push("dimmed");
    }
    if (n.id === highlighted) classes.push("focused");
    return { node: n, ...pos, color: modelColor.get(n.model)!, classes };
  });
  const edges: EdgeView[] = drawableEdges(page.edges, layout.positions).map((e) => ({
    path: edgePath(layout.positions.get(e.from)!, layout.positions.get(e.to)!),
    kind: e.edge_kind,
    dimmed:
      anyHighlight &&
      !(
        (timelineNodes.has(e.from) && timelineNodes.has(e.to)) ||
        (provenanceNodes.has(e.from) && provenanceNodes.has(e.to))
      ),
  }));
  return { width: layout.width, height: layout.height, nodes, edges, modelColor };
}
