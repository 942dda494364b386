/** Application entry: wires the chat panel, state trace, catalog, and the
 * flow-graph view to the service endpoints. */

import {
  createSession,
  getGraph,
  getMeta,
  getSession,
  getStates,
  sendMessage,
  type GraphRecord,
  type TurnPayload,
} from "./api.js";
import {
  renderBadge,
  renderGraph,
  renderMarginalBars,
  renderResponses,
  renderTimeline,
  renderTrace,
  replaceChildrenOf,
} from "./render.js";
import {
  graphView,
  marginalBars,
  sortResponses,
  stateBadge,
  stateTrace,
  timelineRows,
} from "./viewmodel.js";

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

class App {
  sessionId: string | null = null;
  turns: TurnPayload[] = [];
  graphRecords: GraphRecord[] = [];

  async start(): Promise<void> {
    const meta = await getMeta();
    byId("meta").textContent =
      `schema ${meta.schema_version} · K=${meta.k} · ` +
      `vocab ${meta.vocab_size} · beam ${meta.beam_size} · ` +
      `config ${meta.config_hash.slice(0, 8)}`;
    this.sessionId = await createSession();
    await this.refreshGraph();
    await this.refreshStates();
    this.redraw();
  }

  async send(text: string): Promise<void> {
    if (!this.sessionId || !text.trim()) return;
    const status = byId("status");
    status.textContent = "…";
    try {
      const turn = await sendMessage(this.sessionId, text);
      this.turns.push(turn);
      status.textContent = "";
      this.redraw();
      const latest = byId("latest");
      replaceChildrenOf(latest, renderResponses(
        sortResponses(turn.top_responses ?? [])));
    } catch (err) {
      status.textContent = String(err);
    }
  }

  async reset(): Promise<void> {
    this.sessionId = await createSession();
    this.turns = [];
    this.redraw();
    replaceChildrenOf(byId("latest"), document.createElement("div"));
  }

  async resync(): Promise<void> {
    if (!this.sessionId) return;
    const detail = await getSession(this.sessionId);
    this.turns = detail.turns;
    this.redraw();
  }

  async refreshGraph(threshold?: number): Promise<void> {
    const body = await getGraph();
    this.graphRecords = body.records;
    const view = graphView(this.graphRecords, threshold);
    const slider = byId("edge-threshold") as HTMLInputElement;
    slider.min = String(view.minEdgeCount);
    slider.max = String(Math.max(view.maxEdgeCount, view.minEdgeCount));
    if (threshold === undefined) slider.value = String(view.minEdgeCount);
    byId("edge-threshold-value").textContent = String(view.threshold);
    replaceChildrenOf(byId("graph-panel"), renderGraph(view));
  }

  async refreshStates(): Promise<void> {
    const catalog = await getStates();
    const wrap = document.createElement("div");
    for (const [state, entries] of Object.entries(catalog.states)) {
      const card = document.createElement("div");
      card.className = "state-card";
      card.appendChild(renderBadge(stateBadge(Number(state))));
      card.appendChild(renderResponses(sortResponses(entries)));
      wrap.appendChild(card);
    }
    replaceChildrenOf(byId("states-panel"), wrap);
  }

  redraw(): void {
    replaceChildrenOf(byId("timeline-panel"), renderTimeline(
      timelineRows(this.turns)));
    replaceChildrenOf(byId("trace-panel"), renderTrace(
      stateTrace(this.turns)));
    const last = this.turns[this.turns.length - 1];
    if (last) {
      replaceChildrenOf(byId("marginal-panel"), renderMarginalBars(
        marginalBars(last.state_marginal, last.argmax_state)));
      const badge = byId("current-state");
      badge.textContent = stateBadge(last.argmax_state);
    } else {
      byId("current-state").textContent = "START";
      replaceChildrenOf(byId("marginal-panel"), document.createElement("div"));
    }
  }
}

function wire(): void {
  const app = new App();
  const input = byId("chat-input") as HTMLInputElement;
  const form = byId("chat-form") as HTMLFormElement;
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const text = input.value;
    input.value = "";
    void app.send(text);
  });
  byId("reset-btn").addEventListener("click", () => void app.reset());
  const slider = byId("edge-threshold") as HTMLInputElement;
  slider.addEventListener("input", () => {
    const view = graphView(app.graphRecords, Number(slider.value));
    byId("edge-threshold-value").textContent = String(view.threshold);
    replaceChildrenOf(byId("graph-panel"), renderGraph(view));
  });
  app.start().catch((err) => {
    byId("status").textContent = `service unreachable: ${err}`;
  });
}

document.addEventListener("DOMContentLoaded", wire);
