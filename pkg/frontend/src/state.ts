/**
 * ViewState encoded entirely in the URL, so every exploration is a
 * shareable link and the client is stateless across reloads.
 */

import type { CriterionTerm } from "./api.js";

export const MAX_COMPARED = 4;

export interface ViewState {
  run?: string;
  /** graph filter */
  models: string[];
  stepMin?: number;
  stepMax?: number;
  /** criterion draft */
  terms: CriterionTerm[];
  k: number;
  lambda: number;
  /** selected timeline ids for comparison (at most MAX_COMPARED) */
  selected: string[];
  /** instance whose provenance is highlighted */
  highlight?: string;
}

export function defaultState(): ViewState {
  return { models: [], terms: [], k: 3, lambda: 0.3, selected: [] };
}

const clamp = (v: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, v));

function encodeTerm(t: CriterionTerm): string {
  const bits = [t.model, t.variable, t.objective, String(t.weight)];
  if (t.objective === "match" && t.target) {
    bits.push(`${t.target.t_start}@${t.target.resolution}:${t.target.values.join(",")}`);
  }
  return bits.join("~");
}

function decodeTerm(raw: string): CriterionTerm | null {
  const bits = raw.split("~");
  if (bits.length < 4) return null;
  const [model, variable, objective, weightRaw, targetRaw] = bits;
  const weight = Number(weightRaw);
  if (!model || !variable || !Number.isFinite(weight)) return null;
  if (objective !== "maximize" && objective !== "minimize" && objective !== "match") {
    return null;
  }
  const term: CriterionTerm = { model, variable, objective, weight };
  if (objective === "match") {
    if (!targetRaw) return null;
    const m = targetRaw.match(/^(-?\d+)@(\d+):(.*)$/);
    if (!m) return null;
    const values = m[3]!.split(",").map(Number);
    if (values.some((v) => !Number.isFinite(v))) return null;
    term.target = { t_start: Number(m[1]), resolution: Number(m[2]), values };
  }
  return term;
}

export function encodeState(state: ViewState): string {
  const params = new URLSearchParams();
  if (state.run) params.set("run", state.run);
  if (state.models.length) params.set("models", state.models.join(","));
  if (state.stepMin !== undefined) params.set("step_min", String(state.stepMin));
  if (state.stepMax !== undefined) params.set("step_max", String(state.stepMax));
  for (const t of state.terms) params.append("term", encodeTerm(t));
  params.set("k", String(state.k));
  params.set("lambda", String(state.lambda));
  if (state.selected.length) params.set("sel", state.selected.join(","));
  if (state.highlight) params.set("hl", state.highlight);
  return params.toString();
}

export function decodeState(query: string): ViewState {
  const params = new URLSearchParams(query);
  const state = defaultState();
  state.run = params.get("run") ?? undefined;
  const models = params.get("models");
  if (models) state.models = models.split(",").filter(Boolean);
  const stepMin = params.get("step_min");
  if (stepMin !== null && stepMin !== "") state.stepMin = Number(stepMin);
  const stepMax = params.get("step_max");
  if (stepMax !== null && stepMax !== "") state.stepMax = Number(stepMax);
  state.terms = params
    .getAll("term")
    .map(decodeTerm)
    .filter((t): t is CriterionTerm => t !== null);
  const k = Number(params.get("k") ?? "3");
  state.k = Number.isFinite(k) ? clamp(Math.round(k), 1, 16) : 3;
  const lambda = Number(params.get("lambda") ?? "0.3");
  state.lambda = Number.isFinite(lambda) ? clamp(lambda, 0, 1) : 0.3;
  const sel = params.get("sel");
  if (sel) state.selected = sel.split(",").filter(Boolean).slice(0, MAX_COMPARED);
  state.highlight = params.get("hl") ?? undefined;
  return state;
}

/** Replace the browser URL without adding history entries. */
export function pushState(state: ViewState): void {
  const url = `${window.location.pathname}?${encodeState(state)}`;
  window.history.replaceState(null, "", url);
}

/**
 * Selection after a new extraction result arrives: ids that vanished from
 * the result are dropped, and the selection is topped back up from the
 * result order so a comparison keeps its width (at least two when
 * possible).  Moving the lambda slider therefore swaps replaced picks for
 * the newly returned ones.
 */
export function reconcileSelection(previous: string[], available: string[]): string[] {
  const kept = previous.filter((id) => available.includes(id));
  const target = Math.min(
    MAX_COMPARED,
    available.length,
    Math.max(previous.length, 2),
  );
  const out = [...kept];
  for (const id of available) {
    if (out.length >= target) break;
    if (!out.includes(id)) out.push(id);
  }
  return out;
}
