/** Typed client for the dialog service (JSON schema v1).
 *
 * Every function is a thin fetch wrapper; all shaping of data for display
 * lives in viewmodel.ts so it can be tested without a browser or a server.
 */

export interface ResponseEntry {
  text: string;
  logprob: number;
  capped: boolean;
}

export interface TurnPayload {
  turn: number;
  user: string;
  response: string;
  state_marginal: number[];
  argmax_state: number;
  top_responses?: ResponseEntry[];
}

export interface SessionDetail {
  session_id: string;
  turns: TurnPayload[];
}

export interface MetaPayload {
  schema_version: string;
  k: number;
  vocab_size: number;
  beam_size: number;
  config_hash: string;
  [extra: string]: unknown;
}

export interface GraphMetaRecord {
  record: "meta";
  min_edge_count: number;
  top_r: number;
}

export interface GraphNodeRecord {
  record: "node";
  state: number;
  responses: string[];
}

export interface GraphEdgeRecord {
  record: "edge";
  src: number;
  dst: number;
  count: number;
  samples: string[];
}

export type GraphRecord = GraphMetaRecord | GraphNodeRecord | GraphEdgeRecord;

export interface StatesCatalog {
  states: Record<string, ResponseEntry[]>;
}

const BASE = "/api/v1";

async function asJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      /* non-JSON error body; keep the status text */
    }
    throw new Error(`${res.status}: ${detail}`);
  }
  return res.json() as Promise<T>;
}

export async function createSession(): Promise<string> {
  const res = await fetch(`${BASE}/sessions`, { method: "POST" });
  const body = await asJson<{ session_id: string }>(res);
  return body.session_id;
}

export async function deleteSession(sid: string): Promise<void> {
  await asJson(await fetch(`${BASE}/sessions/${sid}`, { method: "DELETE" }));
}

export async function getSession(sid: string): Promise<SessionDetail> {
  return asJson(await fetch(`${BASE}/sessions/${sid}`));
}

export async function sendMessage(
  sid: string,
  text: string,
): Promise<TurnPayload> {
  const res = await fetch(`${BASE}/sessions/${sid}/messages`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ text }),
  });
  return asJson(res);
}

export async function getStates(): Promise<StatesCatalog> {
  return asJson(await fetch(`${BASE}/states`));
}

export async function getGraph(
  minEdgeCount = 1,
  topR = 3,
): Promise<{ records: GraphRecord[] }> {
  const params = new URLSearchParams({
    min_edge_count: String(minEdgeCount),
    top_r: String(topR),
  });
  return asJson(await fetch(`${BASE}/graph?${params}`));
}

export async function getMeta(): Promise<MetaPayload> {
  return asJson(await fetch(`${BASE}/meta`));
}
