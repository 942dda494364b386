"""HTTP service exposing a trained model to the browser companion.

Schema v1, JSON bodies throughout:

  POST   /api/v1/sessions                  -> {"session_id"}
  GET    /api/v1/sessions/{sid}            -> {"session_id", "turns": [...]}
  DELETE /api/v1/sessions/{sid}            -> {"deleted"}
  POST   /api/v1/sessions/{sid}/messages   body {"text"} ->
           {"turn", "response", "state_marginal", "argmax_state",
            "top_responses": [{"text", "logprob", "capped"}]}
  GET    /api/v1/states                    -> {"states": {"0": [...], ...}}
  GET    /api/v1/states/{z}                -> {"state", "responses"}
  GET    /api/v1/graph?min_edge_count=N    -> flow-graph records
  GET    /api/v1/meta                      -> model metadata

Sessions expire after ``session_ttl`` seconds of inactivity (checked lazily
on access).  The model snapshot is immutable; concurrent sessions are
independent.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .corpus import Vocabulary, decode
from .inference import ResponseCache, Session, session_step
from .interpret import export_flow_graph, graph_records

SCHEMA_VERSION = "v1"


class MessageIn(BaseModel):
    text: str


@dataclass
class _SessionSlot:
    session: Session
    last_access: float


@dataclass
class ServiceContext:
    model: object
    cache: ResponseCache
    vocab: Vocabulary
    intents: list | None = None
    lexicon: object = None
    graph_fallback: object = None   # pre-exported DialogFlowGraph
    session_ttl: float = 3600.0
    clock: object = time.monotonic
    extra_meta: dict = field(default_factory=dict)
    sessions: dict[str, _SessionSlot] = field(default_factory=dict)

    def purge(self):
        now = self.clock()
        dead = [sid for sid, slot in self.sessions.items()
                if now - slot.last_access > self.session_ttl]
        for sid in dead:
            del self.sessions[sid]

    def get(self, sid: str) -> Session:
        self.purge()
        slot = self.sessions.get(sid)
        if slot is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
        slot.last_access = self.clock()
        return slot.session


def _entry_payload(entry, vocab: Vocabulary) -> dict:
    return {"text": " ".join(decode(list(entry.tokens), vocab)),
            "logprob": round(float(entry.logprob), 8),
            "capped": bool(entry.capped)}


def _turn_payload(turn) -> dict:
    return {"turn": turn.turn, "user": turn.user_text,
            "response": turn.response_text,
            "state_marginal": [round(float(p), 8) for p in turn.marginal],
            "argmax_state": turn.state}


def make_app(ctx: ServiceContext) -> FastAPI:
    app = FastAPI(title="latent-state dialog service", version=SCHEMA_VERSION)

    @app.post("/api/v1/sessions", status_code=201)
    def create_session():
        ctx.purge()
        session = Session.create(lexicon=ctx.lexicon)
        session.session_id = uuid.uuid4().hex
        ctx.sessions[session.session_id] = _SessionSlot(session, ctx.clock())
        return {"session_id": session.session_id}

    @app.get("/api/v1/sessions/{sid}")
    def get_session(sid: str):
        session = ctx.get(sid)
        return {"session_id": sid,
                "turns": [_turn_payload(t) for t in session.transcript]}

    @app.delete("/api/v1/sessions/{sid}")
    def delete_session(sid: str):
        ctx.get(sid)
        del ctx.sessions[sid]
        return {"deleted": sid}

    @app.post("/api/v1/sessions/{sid}/messages")
    def post_message(sid: str, body: MessageIn):
        session = ctx.get(sid)
        if not body.text.strip():
            raise HTTPException(status_code=400, detail="empty utterance")
        turn = session_step(session, body.text, ctx.model, ctx.cache, ctx.vocab)
        payload = _turn_payload(turn)
        payload["top_responses"] = [
            _entry_payload(e, ctx.vocab)
            for e in ctx.cache.entries.get(turn.state, [])]
        return payload

    @app.get("/api/v1/states")
    def state_catalog():
        return {"states": {str(z): [_entry_payload(e, ctx.vocab) for e in entries]
                           for z, entries in sorted(ctx.cache.entries.items())}}

    @app.get("/api/v1/states/{z}")
    def state_detail(z: int):
        if z not in ctx.cache.entries:
            raise HTTPException(status_code=404, detail=f"no state {z}")
        return {"state": z,
                "responses": [_entry_payload(e, ctx.vocab)
                              for e in ctx.cache.entries[z]]}

    @app.get("/api/v1/graph")
    def graph(min_edge_count: int = 1, top_r: int = 3):
        if ctx.intents is not None:
            g = export_flow_graph(ctx.intents, ctx.cache, min_edge_count,
                                  top_r, vocab=ctx.vocab)
        elif ctx.graph_fallback is not None:
            g = ctx.graph_fallback
        else:
            raise HTTPException(status_code=404,
                                detail="no flow graph available for this model")
        return {"records": graph_records(g)}

    @app.get("/api/v1/meta")
    def meta():
        payload = {"schema_version": SCHEMA_VERSION,
                   "k": ctx.model.K,
                   "vocab_size": ctx.model.vocab_size,
                   "beam_size": ctx.cache.beam_size,
                   "config_hash": ctx.model.config_hash()}
        payload.update(ctx.extra_meta)
        return payload

    return app


def mount_static(app: FastAPI, directory):
    """Serve the browser companion's built assets, if present."""
    from pathlib import Path

    from fastapi.staticfiles import StaticFiles

    if Path(directory).is_dir():
        app.mount("/", StaticFiles(directory=str(directory), html=True),
                  name="static")
    return app
