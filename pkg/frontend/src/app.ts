/**
 * Application wiring: fetch state from the API, render panels, and keep
 * the URL-encoded ViewState in sync.  Stale responses are discarded via
 * per-panel request sequence numbers; identical in-flight extraction
 * requests are deduplicated by their canonical body.
 */

import {
  ApiClient,
  ApiError,
  ExtractionResult,
  GraphNode,
  GraphPage,
  TimelineDetail,
  TimelineRequest,
  TimelineSummary,
} from "./api.js";
import { buildCharts, chartScales, pathFor, polylineSegments, TIMELINE_COLORS } from "./charts.js";
import { buildGraphView, provenanceHighlight, timelineHighlight } from "./graphview.js";
import { NODE_H, NODE_W } from "./layout.js";
import {
  MAX_COMPARED,
  ViewState,
  decodeState,
  defaultState,
  encodeState,
  reconcileSelection,
} from "./state.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function svgEl(tag: string, attrs: Record<string, string> = {}): SVGElement {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  return node;
}

export class App {
  state: ViewState = defaultState();
  private graphPage?: GraphPage;
  private nodesById = new Map<string, GraphNode>();
  private extraction?: ExtractionResult;
  private details = new Map<string, TimelineDetail>();
  private provenanceSet = new Set<string>();
  private graphSeq = 0;
  private extractSeq = 0;
  private inflight = new Map<string, Promise<ExtractionResult>>();

  constructor(
    private api: ApiClient,
    private root: HTMLElement,
  ) {}

  async start(): Promise<void> {
    this.state = decodeState(window.location.search);
    this.renderShell();
    await this.refreshRuns();
    if (this.state.run) {
      await this.refreshGraph();
      if (this.state.terms.length) await this.extract();
    }
  }

  private sync(): void {
    window.history.replaceState(null, "", `${window.location.pathname}?${encodeState(this.state)}`);
  }

  private banner(message: string): void {
    const box = this.root.querySelector("#banner")!;
    box.textContent = message;
    box.classList.add("visible");
    setTimeout(() => box.classList.remove("visible"), 6000);
  }

  // -- data loading ---------------------------------------------------------

  private async refreshRuns(): Promise<void> {
    try {
      const runs = await this.api.listRuns();
      const select = this.root.querySelector("#run-select") as HTMLSelectElement;
      select.innerHTML = "";
      select.append(el("option", { value: "" }, "choose a run"));
      for (const r of runs) {
        const label = `${r.run_id} (${r.flow_name}, ${r.node_count} nodes, ${r.status})`;
        const opt = el("option", { value: r.run_id }, label);
        if (r.run_id === this.state.run) opt.selected = true;
        select.append(opt);
      }
    } catch (e) {
      this.banner(`failed to list runs: ${e}`);
    }
  }

  private async refreshGraph(): Promise<void> {
    if (!this.state.run) return;
    const seq = ++this.graphSeq;
    try {
      const page = await this.api.graph(this.state.run, {
        models: this.state.models.length ? this.state.models : undefined,
        stepMin: this.state.stepMin,
        stepMax: this.state.stepMax,
      });
      if (seq !== this.graphSeq) return; // stale
      this.graphPage = page;
      this.nodesById = new Map(page.nodes.map((n) => [n.id, n]));
      this.renderModelFilter();
      this.renderGraph();
      this.renderCriterionForm();
    } catch (e) {
      this.banner(`graph load failed: ${e}`);
    }
  }

  private extractionRequest(): TimelineRequest {
    return {
      criterion: { terms: this.state.terms },
      k: this.state.k,
      lambda: this.state.lambda,
    };
  }

  async extract(): Promise<void> {
    if (!this.state.run || !this.state.terms.length) return;
    const seq = ++this.extractSeq;
    const request = this.extractionRequest();
    const key = JSON.stringify([this.state.run, request]);
    try {
      let pending = this.inflight.get(key);
      if (!pending) {
        pending = this.api.extract(this.state.run, request);
        this.inflight.set(key, pending);
        pending.finally(() => this.inflight.delete(key));
      }
      const result = await pending;
      if (seq !== this.extractSeq) return; // stale
      this.extraction = result;
      this.state.selected = reconcileSelection(
        this.state.selected,
        result.timelines.map((t) => t.id),
      );
      this.sync();
      await this.loadSelectedDetails();
      this.renderTimelines();
      this.renderCharts();
      this.renderGraph();
    } catch (e) {
      if (e instanceof ApiError && e.status === 422) {
        this.renderCriterionErrors(e.message);
      } else {
        this.banner(`extraction failed: ${e}`);
      }
    }
  }

  private async loadSelectedDetails(): Promise<void> {
    if (!this.state.run) return;
    const missing = this.state.selected.filter((id) => !this.details.has(id));
    for (const id of missing) {
      try {
        this.details.set(id, await this.api.timeline(this.state.run, id));
      } catch (e) {
        this.banner(`timeline ${id} failed: ${e}`);
      }
    }
  }

  selectedDetails(): TimelineDetail[] {
    return this.state.selected
      .map((id) => this.details.get(id))
      .filter((d): d is TimelineDetail => d !== undefined);
  }

  /** Union of the API node sets of all selected timelines. */
  selectionHighlight(): Set<string> {
    const out = new Set<string>();
    for (const d of this.selectedDetails()) {
      for (const id of timelineHighlight(d)) out.add(id);
    }
    return out;
  }

  async toggleTimeline(id: string): Promise<void> {
    if (this.state.selected.includes(id)) {
      this.state.selected = this.state.selected.filter((s) => s !== id);
    } else {
      this.state.selected = [...this.state.selected, id].slice(-MAX_COMPARED);
    }
    this.sync();
    await this.loadSelectedDetails();
    this.renderTimelines();
    this.renderCharts();
    this.renderGraph();
  }

  async showProvenance(instanceId: string): Promise<void> {
    if (!this.state.run) return;
    try {
      const prov = await this.api.provenance(this.state.run, instanceId);
      this.provenanceSet = provenanceHighlight(prov);
      this.state.highlight = instanceId;
      this.sync();
      this.renderGraph();
      this.renderDetailDrawer(instanceId);
    } catch (e) {
      this.banner(`provenance failed: ${e}`);
    }
  }

  async exportSelected(id: string): Promise<void> {
    if (!this.state.run) return;
    try {
      const result = await this.api.exportTimeline(this.state.run, id);
      this.banner(`exported ${result.export_id} -> ${result.path}`);
    } catch (e) {
      this.banner(`export failed: ${e}`);
    }
  }

  // -- rendering ------------------------------------------------------------

  private renderShell(): void {
    this.root.innerHTML = "";
    this.root.append(
      el("div", { id: "banner", class: "banner" }),
      el("header", { class: "topbar" }),
      el("div", { class: "columns" }),
    );
    const top = this.root.querySelector(".topbar")!;
    top.append(el("h1", {}, "ensemble explorer"));
    const select = el("select", { id: "run-select" });
    select.addEventListener("change", async () => {
      this.state.run = (select as HTMLSelectElement).value || undefined;
      this.state.selected = [];
      this.details.clear();
      this.extraction = undefined;
      this.provenanceSet.clear();
      this.sync();
      await this.refreshGraph();
    });
    top.append(select);
    const columns = this.root.querySelector(".columns")!;
    const left = el("div", { class: "col col-left" });
    left.append(
      el("section", { id: "graph-panel", class: "panel" }),
      el("section", { id: "detail-drawer", class: "panel" }),
    );
    const right = el("div", { class: "col col-right" });
    right.append(
      el("section", { id: "criterion-panel", class: "panel" }),
      el("section", { id: "timeline-panel", class: "panel" }),
      el("section", { id: "charts-panel", class: "panel" }),
    );
    columns.append(left, right);
    this.renderCriterionForm();
  }

  private renderModelFilter(): void {
    // filter checkboxes live inside the graph panel header (rebuilt there)
  }

  renderGraph(): void {
    const panel = this.root.querySelector("#graph-panel");
    if (!panel || !this.graphPage) return;
    panel.innerHTML = "";
    panel.append(el("h2", {}, `provenance graph (${this.graphPage.total_nodes} instances)`));
    const view = buildGraphView(
      this.graphPage,
      this.selectionHighlight(),
      this.provenanceSet,
      this.state.highlight,
    );
    const scroll = el("div", { class: "graph-scroll" });
    const svg = svgEl("svg", {
      width: String(view.width),
      height: String(view.height),
      viewBox: `0 0 ${view.width} ${view.height}`,
    });
    for (const e of view.edges) {
      svg.append(
        svgEl("path", {
          d: e.path,
          class: `edge edge-${e.kind}${e.dimmed ? " dimmed" : ""}`,
        }),
      );
    }
    for (const n of view.nodes) {
      const g = svgEl("g", {
        class: `node ${n.classes.join(" ")}`,
        transform: `translate(${n.x},${n.y})`,
        "data-id": n.node.id,
      });
      g.append(
        svgEl("rect", {
          width: String(NODE_W),
          height: String(NODE_H),
          rx: "6",
          fill: n.color,
        }),
      );
      const label = svgEl("text", { x: "6", y: "14", class: "node-label" });
      label.textContent = `${n.node.model}@${n.node.step}`;
      const sub = svgEl("text", { x: "6", y: "27", class: "node-sub" });
      sub.textContent = n.node.id.slice(0, 10);
      g.append(label, sub);
      g.addEventListener("click", () => void this.showProvenance(n.node.id));
      svg.append(g);
    }
    scroll.append(svg);
    panel.append(scroll);
  }

  private renderCriterionForm(): void {
    const panel = this.root.querySelector("#criterion-panel");
    if (!panel) return;
    panel.innerHTML = "";
    panel.append(el("h2", {}, "preference & diversity"));
    const form = el("div", { class: "criterion-form" });
    const variables: [string, string][] = [];
    if (this.graphPage) {
      const seen = new Set<string>();
      for (const n of this.graphPage.nodes) {
        for (const v of n.output_variables) {
          const key = `${n.model}:${v}`;
          if (!seen.has(key)) {
            seen.add(key);
            variables.push([n.model, v]);
          }
        }
      }
      variables.sort((a, b) => (a[0] + a[1]).localeCompare(b[0] + b[1]));
    }
    const termList = el("div", { class: "term-list" });
    this.state.terms.forEach((t, idx) => {
      const row = el("div", { class: "term-row" });
      row.append(
        el("span", {}, `${t.objective} ${t.model}:${t.variable} (w=${t.weight})`),
      );
      const remove = el("button", { class: "mini" }, "remove");
      remove.addEventListener("click", () => {
        this.state.terms.splice(idx, 1);
        this.sync();
        this.renderCriterionForm();
      });
      row.append(remove);
      termList.append(row);
    });
    form.append(termList);

    const varSelect = el("select", { id: "term-var" });
    for (const [m, v] of variables) {
      varSelect.append(el("option", { value: `${m}:${v}` }, `${m}:${v}`));
    }
    const objSelect = el("select", { id: "term-obj" });
    for (const o of ["maximize", "minimize"]) {
      objSelect.append(el("option", { value: o }, o));
    }
    const weight = el("input", { type: "number", value: "1", step: "0.5", id: "term-weight" });
    const add = el("button", {}, "add term");
    add.addEventListener("click", () => {
      const [model, variable] = (varSelect as HTMLSelectElement).value.split(":");
      if (!model || !variable) return;
      this.state.terms.push({
        model,
        variable,
        objective: (objSelect as HTMLSelectElement).value as "maximize" | "minimize",
        weight: Number((weight as HTMLInputElement).value) || 1,
      });
      this.sync();
      this.renderCriterionForm();
    });
    const addRow = el("div", { class: "term-add" });
    addRow.append(varSelect, objSelect, weight, add);
    form.append(addRow);

    const kInput = el("input", {
      type: "number", min: "1", max: "16", value: String(this.state.k), id: "k-input",
    });
    kInput.addEventListener("change", () => {
      this.state.k = Math.max(1, Number((kInput as HTMLInputElement).value) || 3);
      this.sync();
    });
    const lambda = el("input", {
      type: "range", min: "0", max: "1", step: "0.05",
      value: String(this.state.lambda), id: "lambda-slider",
    });
    const lambdaLabel = el("span", { id: "lambda-value" }, this.state.lambda.toFixed(2));
    lambda.addEventListener("input", () => {
      this.state.lambda = Number((lambda as HTMLInputElement).value);
      lambdaLabel.textContent = this.state.lambda.toFixed(2);
      this.sync();
    });
    lambda.addEventListener("change", () => void this.extract());
    const knobs = el("div", { class: "knobs" });
    knobs.append(el("label", {}, "k"), kInput, el("label", {}, "lambda"), lambda, lambdaLabel);
    form.append(knobs);

    const errors = el("div", { id: "criterion-errors", class: "errors" });
    form.append(errors);
    const go = el("button", { class: "primary" }, "extract timelines");
    go.addEventListener("click", () => void this.extract());
    form.append(go);
    panel.append(form);
  }

  private renderCriterionErrors(message: string): void {
    const box = this.root.querySelector("#criterion-errors");
    if (box) box.textContent = message;
  }

  renderTimelines(): void {
    const panel = this.root.querySelector("#timeline-panel");
    if (!panel) return;
    panel.innerHTML = "";
    panel.append(el("h2", {}, "extracted timelines"));
    if (!this.extraction) return;
    const table = el("table", { class: "timelines" });
    const head = el("tr");
    for (const h of ["", "id", "score", "coverage", "nodes", ""]) {
      head.append(el("th", {}, h));
    }
    table.append(head);
    this.extraction.timelines.forEach((t: TimelineSummary) => {
      const row = el("tr");
      const selectedIdx = this.state.selected.indexOf(t.id);
      const pick = el("input", { type: "checkbox", "data-id": t.id });
      (pick as HTMLInputElement).checked = selectedIdx >= 0;
      pick.addEventListener("change", () => void this.toggleTimeline(t.id));
      const swatch = el("td");
      swatch.append(pick);
      if (selectedIdx >= 0) {
        const dot = el("span", { class: "swatch" });
        dot.style.background = TIMELINE_COLORS[selectedIdx % TIMELINE_COLORS.length]!;
        swatch.append(dot);
      }
      row.append(swatch);
      row.append(el("td", { class: "mono" }, t.id));
      row.append(el("td", {}, t.score.toPrecision(6)));
      row.append(el("td", {}, t.coverage.toFixed(3)));
      row.append(el("td", {}, String(t.node_count)));
      const exportCell = el("td");
      const btn = el("button", { class: "mini" }, "export");
      btn.addEventListener("click", () => void this.exportSelected(t.id));
      exportCell.append(btn);
      row.append(exportCell);
      table.append(row);
    });
    panel.append(table);
  }

  renderCharts(): void {
    const panel = this.root.querySelector("#charts-panel");
    if (!panel) return;
    panel.innerHTML = "";
    panel.append(el("h2", {}, "timeline comparison"));
    const details = this.selectedDetails();
    if (!details.length) {
      panel.append(el("p", { class: "hint" }, "select timelines above to compare"));
      return;
    }
    const charts = buildCharts(details, this.nodesById);
    const width = 460;
    const height = 160;
    for (const chart of charts) {
      const box = el("div", { class: "chart" });
      box.append(el("h3", {}, `${chart.model}:${chart.variable}`));
      const svg = svgEl("svg", {
        width: String(width),
        height: String(height),
        viewBox: `0 0 ${width} ${height}`,
      });
      const allPoints = chart.lines.flatMap((l) => l.points);
      const scales = chartScales(allPoints, width, height);
      for (const [lo, hi] of chart.sharedRanges) {
        svg.append(
          svgEl("rect", {
            x: String(scales.x(lo)),
            y: "0",
            width: String(Math.max(0, scales.x(hi) - scales.x(lo))),
            height: String(height),
            class: "shared-band",
          }),
        );
      }
      for (const line of chart.lines) {
        for (const segment of polylineSegments(line.points, line.resolution)) {
          svg.append(
            svgEl("path", {
              d: pathFor(segment, scales),
              class: "series-line",
              stroke: line.color,
              "data-timeline": line.timelineId,
            }),
          );
        }
      }
      box.append(svg);
      panel.append(box);
    }
  }

  private renderDetailDrawer(instanceId: string): void {
    const panel = this.root.querySelector("#detail-drawer");
    if (!panel) return;
    const node = this.nodesById.get(instanceId);
    panel.innerHTML = "";
    panel.append(el("h2", {}, "instance detail"));
    if (!node) return;
    const dl = el("dl", { class: "detail" });
    const push = (k: string, v: string) => {
      dl.append(el("dt", {}, k), el("dd", { class: "mono" }, v));
    };
    push("id", node.id);
    push("model", node.model);
    push("step", String(node.step));
    push("window", `[${node.window[0]}, ${node.window[1]})`);
    push("status", node.status);
    for (const [k, v] of Object.entries(node.params)) {
      push(`param ${k}`, String(v));
    }
    if (node.state_parent) push("state parent", node.state_parent);
    panel.append(dl);
  }
}
