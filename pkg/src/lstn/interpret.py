"""Interpretability exports.

Everything here works off hard argmax decisions so that each artifact is
directly auditable: replaying a training dialog with the state tracker yields
one (previous state, current state, user utterance) triple per turn.  Grouping
the triples by state pair gives intent classes; thresholded counts give the
dialog-flow graph; comparing per-state top responses flags duplicate states.

The START predecessor is encoded as state -1 in records and rendered as
"START" in the text format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Dialog, Vocabulary, decode, encode
from .inference import ResponseCache, track_state
from .model import START_STATE


@dataclass
class IntentClass:
    """User utterances that drive the argmax transition z_prev -> z_curr."""

    z_prev: int            # START_STATE (-1) or a state id
    z_curr: int
    utterances: list[str] = field(default_factory=list)
    count: int = 0


def mine_intents(train_dialogs: list[Dialog], model, vocab: Vocabulary
                 ) -> list[IntentClass]:
    """Replay dialogs through the state tracker and group turns by the
    induced argmax-state transition."""
    groups: dict[tuple[int, int], IntentClass] = {}
    for d in train_dialogs:
        marginal = None
        z_prev = START_STATE
        for turn in d.turns:
            text = " ".join(turn.user)
            marginal = track_state(marginal, encode(turn.user, vocab), model)
            z = marginal.argmax
            key = (z_prev, z)
            cls = groups.get(key)
            if cls is None:
                cls = groups[key] = IntentClass(z_prev, z)
            cls.count += 1
            if text not in cls.utterances:
                cls.utterances.append(text)
            z_prev = z
    return sorted(groups.values(), key=lambda c: (-c.count, c.z_prev, c.z_curr))


def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def detect_duplicates(cache: ResponseCache, similarity_threshold: float = 0.8
                      ) -> list[list[int]]:
    """Groups of states whose rank-1 responses look alike (token Jaccard).

    Returns connected components of size >= 2, each sorted, ordered by their
    smallest member.
    """
    states = sorted(cache.entries)
    token_sets = {z: set(cache.entries[z][0].tokens)
                  for z in states if cache.entries[z]}
    parent = {z: z for z in token_sets}

    def find(z):
        while parent[z] != z:
            parent[z] = parent[parent[z]]
            z = parent[z]
        return z

    keys = sorted(token_sets)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            if _jaccard(token_sets[a], token_sets[b]) >= similarity_threshold:
                parent[find(b)] = find(a)
    comps: dict[int, list[int]] = {}
    for z in keys:
        comps.setdefault(find(z), []).append(z)
    return sorted([sorted(c) for c in comps.values() if len(c) >= 2])


# ---------------------------------------------------------------------------
# flow graph


@dataclass
class FlowNode:
    state: int                       # -1 = START
    responses: list[str] = field(default_factory=list)


@dataclass
class FlowEdge:
    src: int
    dst: int
    count: int
    samples: list[str] = field(default_factory=list)


@dataclass
class DialogFlowGraph:
    nodes: list[FlowNode]
    edges: list[FlowEdge]
    min_edge_count: int
    top_r: int


def export_flow_graph(intents: list[IntentClass], cache: ResponseCache,
                      min_edge_count: int = 1, top_r: int = 3,
                      vocab: Vocabulary | None = None) -> DialogFlowGraph:
    """Filter mined transitions by count and attach per-state top responses.

    Nodes cover START plus every model state; edges keep up to 3 sample
    utterances each, in first-seen order.  Responses are decoded through
    ``vocab`` when given, otherwise rendered as id strings.
    """
    def render(ids):
        if vocab is not None:
            return " ".join(decode(list(ids), vocab))
        return " ".join(str(i) for i in ids)

    nodes = [FlowNode(START_STATE)]
    for z in sorted(cache.entries):
        nodes.append(FlowNode(z, [render(e.tokens) for e in cache.entries[z][:top_r]]))
    edges = [FlowEdge(c.z_prev, c.z_curr, c.count, c.utterances[:3])
             for c in intents if c.count >= min_edge_count]
    edges.sort(key=lambda e: (e.src, e.dst))
    return DialogFlowGraph(nodes=nodes, edges=edges,
                           min_edge_count=min_edge_count, top_r=top_r)


def graph_records(graph: DialogFlowGraph) -> list[dict]:
    recs = [{"record": "meta", "min_edge_count": graph.min_edge_count,
             "top_r": graph.top_r}]
    for n in graph.nodes:
        recs.append({"record": "node", "state": n.state, "responses": n.responses})
    for e in graph.edges:
        recs.append({"record": "edge", "src": e.src, "dst": e.dst,
                     "count": e.count, "samples": e.samples})
    return recs


def graph_to_jsonl(graph: DialogFlowGraph) -> str:
    return "\n".join(json.dumps(r, sort_keys=True) for r in graph_records(graph)) + "\n"


def graph_from_jsonl(text: str) -> DialogFlowGraph:
    meta, nodes, edges = {}, [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec.get("record")
        if kind == "meta":
            meta = rec
        elif kind == "node":
            nodes.append(FlowNode(rec["state"], list(rec["responses"])))
        elif kind == "edge":
            edges.append(FlowEdge(rec["src"], rec["dst"], rec["count"],
                                  list(rec["samples"])))
        else:
            raise ValueError(f"unknown graph record type {kind!r}")
    return DialogFlowGraph(nodes=nodes, edges=edges,
                           min_edge_count=meta.get("min_edge_count", 1),
                           top_r=meta.get("top_r", 3))


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _node_name(state: int) -> str:
    return "START" if state == START_STATE else f"z{state}"


def graph_to_dot(graph: DialogFlowGraph) -> str:
    """Graphviz text form.  One node line per state (label = name plus its
    top responses), one edge line per kept transition (label = count plus up
    to 3 sample utterances separated by ' | ')."""
    lines = ["digraph dialog_flow {", "  rankdir=LR;"]
    for n in graph.nodes:
        name = _node_name(n.state)
        if n.state == START_STATE:
            lines.append(f'  "{name}" [shape=diamond];')
        else:
            label = "\\n".join([name] + [_dot_escape(r) for r in n.responses])
            lines.append(f'  "{name}" [shape=box, label="{label}"];')
    for e in graph.edges:
        label = _dot_escape(" | ".join(e.samples))
        lines.append(f'  "{_node_name(e.src)}" -> "{_node_name(e.dst)}" '
                     f'[label="{e.count}\\n{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_flow_graph(graph: DialogFlowGraph, jsonl_path, dot_path=None):
    Path(jsonl_path).write_text(graph_to_jsonl(graph), encoding="utf-8")
    if dot_path is not None:
        Path(dot_path).write_text(graph_to_dot(graph), encoding="utf-8")


def edge_pairs(graph: DialogFlowGraph) -> set[tuple[int, int]]:
    return {(e.src, e.dst) for e in graph.edges}
