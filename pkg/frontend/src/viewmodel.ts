/** Pure view-model: turns service payloads into render-ready structures.
 *
 * No DOM and no fetch in this module — everything here is deterministic on
 * its inputs, which is what the snapshot tests pin down.  Raw probabilities
 * and counts are passed through unchanged so the rendered values always
 * equal the service payload; formatting happens at the edge.
 */

import type {
  GraphEdgeRecord,
  GraphMetaRecord,
  GraphNodeRecord,
  GraphRecord,
  ResponseEntry,
  TurnPayload,
} from "./api.js";

export interface MarginalBar {
  state: number;
  label: string;
  prob: number;
  widthPct: number;
  isArgmax: boolean;
}

export interface TimelineRow {
  turn: number;
  user: string;
  response: string;
  badge: string;
  state: number;
  prob: number;
}

export interface TraceStep {
  turn: number;
  state: number;
  badge: string;
  prob: number;
}

export interface GraphView {
  minEdgeCount: number;
  topR: number;
  threshold: number;
  nodes: GraphNodeRecord[];
  edges: GraphEdgeRecord[];
  nodeCount: number;
  edgeCount: number;
  maxEdgeCount: number;
}

export function stateBadge(state: number): string {
  return state < 0 ? "START" : `z${state}`;
}

/** One bar per latent state; widths are percentages of the argmax bar so
 * the most likely state always renders full width. */
export function marginalBars(
  marginal: number[],
  argmaxState: number,
): MarginalBar[] {
  const peak = Math.max(...marginal, Number.MIN_VALUE);
  return marginal.map((prob, state) => ({
    state,
    label: stateBadge(state),
    prob,
    widthPct: Math.round((1000 * prob) / peak) / 10,
    isArgmax: state === argmaxState,
  }));
}

export function timelineRows(turns: TurnPayload[]): TimelineRow[] {
  return turns.map((t) => ({
    turn: t.turn,
    user: t.user,
    response: t.response,
    badge: stateBadge(t.argmax_state),
    state: t.argmax_state,
    prob: t.state_marginal[t.argmax_state] ?? 0,
  }));
}

export function stateTrace(turns: TurnPayload[]): TraceStep[] {
  return turns.map((t) => ({
    turn: t.turn,
    state: t.argmax_state,
    badge: stateBadge(t.argmax_state),
    prob: t.state_marginal[t.argmax_state] ?? 0,
  }));
}

/** Client-side threshold view over the exported flow graph.  At
 * threshold === minEdgeCount this reproduces the export's counts exactly;
 * larger thresholds only hide edges. */
export function graphView(records: GraphRecord[], threshold?: number): GraphView {
  const meta = records.find((r): r is GraphMetaRecord => r.record === "meta");
  const nodes = records.filter((r): r is GraphNodeRecord => r.record === "node");
  const edges = records.filter((r): r is GraphEdgeRecord => r.record === "edge");
  const minEdgeCount = meta ? meta.min_edge_count : 1;
  const cut = Math.max(threshold ?? minEdgeCount, minEdgeCount);
  const kept = edges.filter((e) => e.count >= cut);
  return {
    minEdgeCount,
    topR: meta ? meta.top_r : 3,
    threshold: cut,
    nodes,
    edges: kept,
    nodeCount: nodes.length,
    edgeCount: kept.length,
    maxEdgeCount: edges.reduce((m, e) => Math.max(m, e.count), 0),
  };
}

export function sortResponses(entries: ResponseEntry[]): ResponseEntry[] {
  return [...entries].sort((a, b) => b.logprob - a.logprob);
}

export function formatProb(p: number): string {
  return `${(100 * p).toFixed(1)}%`;
}

export function formatLogprob(lp: number): string {
  return lp.toFixed(2);
}
