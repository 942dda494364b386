"""Runtime use of a trained model.

State tracking folds each user utterance into a forward belief over the K
states.  Responses come from a per-state cache built once by beam search over
the decoder; answering a turn is then argmax state -> rank-1 cached response.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .corpus import BOS, EOS, PAD, AnonymizerState, Vocabulary, decode, encode, tokenize
from .errors import InferenceError


@dataclass
class StateMarginal:
    """p(z_i | x_{1:i}) over the K states, kept in log space."""

    log_probs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.log_probs))

    def check(self, tol: float = 1e-6):
        s = float(np.exp(self.log_probs).sum())
        if abs(s - 1.0) > tol:
            raise InferenceError(f"state marginal sums to {s}, expected 1")


@dataclass(frozen=True)
class CacheEntry:
    tokens: tuple[int, ...]       # response ids, terminator stripped
    logprob: float
    capped: bool = False          # hit the length cap without emitting EOS


@dataclass
class ResponseCache:
    beam_size: int
    max_len: int
    length_normalize: bool
    entries: dict[int, list[CacheEntry]] = field(default_factory=dict)

    def top(self, z: int) -> CacheEntry:
        ranked = self.entries.get(z)
        if not ranked:
            raise InferenceError(f"response cache has no entries for state {z}")
        return ranked[0]


def _rank_key(entry: CacheEntry, length_normalize: bool):
    lp = entry.logprob / max(len(entry.tokens) + 1, 1) if length_normalize \
        else entry.logprob
    return (-lp, entry.tokens)


def _beam_search_state(model, z: int, beam_size: int, max_len: int,
                       length_normalize: bool) -> list[CacheEntry]:
    """Length-bounded beam search over the decoder for one state.

    PAD and BOS are never emitted.  If fewer than ``beam_size`` sequences
    terminate, the list is padded with the best length-capped beams, flagged.
    """
    h, c = model.decoder_start([z])
    beams: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    last = np.array([BOS])
    finished: dict[tuple[int, ...], float] = {}
    for _ in range(max_len):
        h, c, logp = model.decoder_step(h, c, last)
        flat = np.array([lp for _, lp in beams])[:, None] + logp
        flat[:, PAD] = -np.inf
        flat[:, BOS] = -np.inf
        for r, (toks, _) in enumerate(beams):
            score = float(flat[r, EOS])
            if np.isfinite(score) and (toks not in finished or finished[toks] < score):
                finished[toks] = score
        flat[:, EOS] = -np.inf
        n_take = min(beam_size, int(np.isfinite(flat).sum()))
        if n_take == 0:
            beams = []
            break
        order = np.argsort(flat, axis=None)[::-1][:n_take]
        rows, cols = np.unravel_index(order, flat.shape)
        beams = [(beams[r][0] + (int(v),), float(flat[r, v]))
                 for r, v in zip(rows, cols)]
        h, c = h[rows], c[rows]
        last = cols
        if len(finished) >= beam_size and not length_normalize:
            worst_kept = sorted(finished.values(), reverse=True)[beam_size - 1]
            if beams[0][1] <= worst_kept:
                break  # extensions only lower scores; frontier can't help
    ranked = [CacheEntry(toks, lp) for toks, lp in finished.items()]
    ranked.sort(key=lambda e: _rank_key(e, length_normalize))
    ranked = ranked[:beam_size]
    if len(ranked) < beam_size and beams:
        seen = {e.tokens for e in ranked}
        capped = [CacheEntry(toks, lp, capped=True) for toks, lp in beams
                  if toks not in seen]
        capped.sort(key=lambda e: _rank_key(e, length_normalize))
        ranked.extend(capped[: beam_size - len(ranked)])
    return ranked


def build_response_cache(model, beam_size: int = 10, max_len: int | None = None,
                         length_normalize: bool = False) -> ResponseCache:
    """Per-state top responses; computed once and reused at inference time."""
    if beam_size < 1:
        raise ValueError(f"beam_size must be positive, got {beam_size}")
    if max_len is None:
        max_len = model.config.max_decode_len
    cache = ResponseCache(beam_size=beam_size, max_len=max_len,
                          length_normalize=length_normalize)
    for z in range(model.K):
        cache.entries[z] = _beam_search_state(model, z, beam_size, max_len,
                                              length_normalize)
    return cache


def track_state(prev: StateMarginal | None, x_ids, model) -> StateMarginal:
    """Fold one user utterance into the belief; ``prev=None`` is the START
    point mass.  Output is renormalized, so arbitrary (even unnormalized)
    inputs stay proper."""
    with dc.no_grad():
        tm = model.transition_matrix(x_ids).value
    K = model.K
    if prev is None:
        lp = tm[K].copy()
    else:
        lp = dc.logsumexp(prev.log_probs[:, None] + tm[:K], axis=0)
        lp = np.atleast_1d(lp)
    lp = lp - dc.logsumexp(lp, axis=None)
    return StateMarginal(lp)


def respond(marginal: StateMarginal, cache: ResponseCache) -> tuple[int, tuple[int, ...]]:
    """Argmax state (ties break to the lowest id), then its rank-1 response."""
    z = marginal.argmax
    return z, cache.top(z).tokens


@dataclass
class SessionTurn:
    turn: int
    user_text: str
    user_ids: tuple[int, ...]
    marginal: np.ndarray          # probability space, length K
    state: int
    response_ids: tuple[int, ...]
    response_text: str


@dataclass
class Session:
    session_id: str
    marginal: StateMarginal | None = None
    transcript: list[SessionTurn] = field(default_factory=list)
    anonymizer: AnonymizerState | None = None

    _ids = itertools.count()

    @classmethod
    def create(cls, lexicon=None) -> "Session":
        anon = AnonymizerState(lexicon) if lexicon else None
        return cls(session_id=f"s{next(cls._ids):08d}", anonymizer=anon)


def session_step(session: Session, text: str, model, cache: ResponseCache,
                 vocab: Vocabulary) -> SessionTurn:
    """Advance a session by one user utterance; appends to the transcript."""
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("empty user utterance")
    if session.anonymizer is not None:
        tokens = list(session.anonymizer.replace(tokens))
    ids = encode(tokens, vocab)
    session.marginal = track_state(session.marginal, ids, model)
    z, response_ids = respond(session.marginal, cache)
    turn = SessionTurn(
        turn=len(session.transcript) + 1,
        user_text=text,
        user_ids=tuple(ids),
        marginal=session.marginal.probs,
        state=z,
        response_ids=response_ids,
        response_text=" ".join(decode(response_ids, vocab)),
    )
    session.transcript.append(turn)
    return turn


def transcript_records(session: Session) -> list[dict]:
    """Line-delimited export form of a session transcript."""
    return [{"turn": t.turn, "user": t.user_text,
             "marginal": [round(float(p), 8) for p in t.marginal],
             "state": t.state, "response": t.response_text}
            for t in session.transcript]
