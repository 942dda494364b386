/** DOM rendering for the view-model structures.  Small helpers only; the
 * shapes they consume are produced (and tested) in viewmodel.ts. */

import type { ResponseEntry } from "./api.js";
import {
  formatLogprob,
  formatProb,
  type GraphView,
  type MarginalBar,
  type TimelineRow,
  type TraceStep,
} from "./viewmodel.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderBadge(badge: string, prob?: number): HTMLElement {
  const span = el("span", "badge", badge);
  if (prob !== undefined) span.title = formatProb(prob);
  return span;
}

export function renderMarginalBars(bars: MarginalBar[]): HTMLElement {
  const wrap = el("div", "bars");
  for (const bar of bars) {
    const row = el("div", bar.isArgmax ? "bar-row argmax" : "bar-row");
    row.appendChild(el("span", "bar-label", bar.label));
    const track = el("div", "bar-track");
    const fill = el("div", "bar-fill");
    fill.style.width = `${bar.widthPct}%`;
    track.appendChild(fill);
    row.appendChild(track);
    row.appendChild(el("span", "bar-prob", formatProb(bar.prob)));
    wrap.appendChild(row);
  }
  return wrap;
}

export function renderTimeline(rows: TimelineRow[]): HTMLElement {
  const list = el("ol", "timeline");
  for (const row of rows) {
    const item = el("li", "timeline-row");
    const head = el("div", "timeline-head");
    head.appendChild(el("span", "turn-no", `#${row.turn}`));
    head.appendChild(renderBadge(row.badge, row.prob));
    item.appendChild(head);
    item.appendChild(el("div", "user-text", row.user));
    item.appendChild(el("div", "agent-text", row.response));
    list.appendChild(item);
  }
  return list;
}

export function renderTrace(steps: TraceStep[]): HTMLElement {
  const strip = el("div", "trace");
  strip.appendChild(el("span", "trace-start", "START"));
  for (const step of steps) {
    strip.appendChild(el("span", "trace-arrow", "→"));
    const node = el("span", "trace-node", step.badge);
    node.title = `turn ${step.turn}: ${formatProb(step.prob)}`;
    strip.appendChild(node);
  }
  return strip;
}

export function renderResponses(entries: ResponseEntry[]): HTMLElement {
  const list = el("ul", "responses");
  for (const entry of entries) {
    const item = el("li", entry.capped ? "response capped" : "response");
    item.appendChild(el("span", "response-text", entry.text));
    item.appendChild(el("span", "response-lp", formatLogprob(entry.logprob)));
    if (entry.capped) item.title = "decode hit the length cap";
    list.appendChild(item);
  }
  return list;
}

export function renderGraph(view: GraphView): HTMLElement {
  const wrap = el("div", "graph");
  const summary = el(
    "div",
    "graph-summary",
    `${view.nodeCount} states, ${view.edgeCount} edges ` +
      `(count ≥ ${view.threshold})`,
  );
  wrap.appendChild(summary);

  const table = el("table", "graph-edges");
  const head = el("tr");
  for (const col of ["from", "to", "count", "sample utterances"]) {
    head.appendChild(el("th", undefined, col));
  }
  table.appendChild(head);
  for (const edge of view.edges) {
    const row = el("tr");
    row.appendChild(el("td", undefined, edge.src < 0 ? "START" : `z${edge.src}`));
    row.appendChild(el("td", undefined, `z${edge.dst}`));
    row.appendChild(el("td", "edge-count", String(edge.count)));
    row.appendChild(el("td", "edge-samples", edge.samples.join(" | ")));
    table.appendChild(row);
  }
  wrap.appendChild(table);

  const nodes = el("div", "graph-nodes");
  for (const node of view.nodes) {
    const card = el("div", "node-card");
    card.appendChild(el("div", "node-title", `z${node.state}`));
    for (const resp of node.responses) {
      card.appendChild(el("div", "node-response", resp));
    }
    nodes.appendChild(card);
  }
  wrap.appendChild(nodes);
  return wrap;
}

export function replaceChildrenOf(target: HTMLElement, child: HTMLElement): void {
  target.replaceChildren(child);
}
