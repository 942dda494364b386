"""Pipelined baseline: states and emissions first, transitions second.

Phase 1 fits, independently per turn, p(z_i, y_i | x_{1:i}) =
p(z_i | context)·p(y_i | z_i), where the context encoding runs an LSTM over
the concatenation of the user utterances so far.  The E-step is a single
Bayes normalization per turn.  Phase 2 freezes the emissions, derives hard
labels z_hat = argmax_z p(y | z), and trains the same transition architecture
as the joint model on those labels with cross-entropy.

The resulting :class:`SplitModel` exposes the same interface as the joint
model, so tracking, response caches, and every evaluation run unchanged.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .corpus import CorpusSplit, EncodedDialog, Vocabulary, build_vocab, encode_dialog
from .em import TrainConfig
from .model import LstnModel, ModelConfig

PHASE1_PREFIXES = ("emb", "ctx.", "cls.", "r", "dec.", "out.")
PHASE2_PREFIXES = ("emb2", "enc2.", "trans.", "v")


def _names_with_prefix(store: dc.ParamStore, prefixes) -> list[str]:
    """Dotted entries match as cell prefixes, bare entries as exact names
    (so "emb" does not also claim "emb2")."""
    return [n for n in store.names()
            if any(n.startswith(p) if p.endswith(".") else n == p
                   for p in prefixes)]


class SplitModel(LstnModel):
    """Same outward behavior as the joint model, different training story.

    The transition side (utterance encoder emb2/enc2, classifier trans.W/b,
    state table v) matches the joint architecture; the phase-1 context
    classifier (ctx cell + cls head) exists only for training and is not used
    at inference time.
    """

    def __init__(self, config: ModelConfig, store: dc.ParamStore | None = None,
                 seed: int = 0):
        if config.shared_state_embeddings:
            raise ValueError("the pipelined baseline keeps v and r separate")
        K, V = config.K, config.vocab_size
        E, H = config.embedding_dim, config.hidden_dim
        if store is None:
            store = dc.ParamStore()
            rng = np.random.default_rng(seed)
            # phase 1: context classifier + emissions
            store.add("emb", (V, E), rng=rng)
            dc.add_lstm_cell(store, "ctx", E, H, rng)
            store.add("cls.W", (K, H), rng=rng)
            store.add("cls.b", (K,), rng=rng)
            s = config.state_init_scale
            store.add("r", (K, H), init=rng.uniform(-s, s, size=(K, H)))
            dc.add_lstm_cell(store, "dec", E, H, rng)
            store.add("out.W", (V, H), rng=rng)
            store.add("out.b", (V,), rng=rng)
            # phase 2: utterance encoder + transition classifier
            store.add("emb2", (V, E), rng=rng)
            dc.add_lstm_cell(store, "enc2", E, H, rng)
            store.add("trans.W", (K, 2 * H), rng=rng)
            store.add("trans.b", (K,), rng=rng)
            store.add("v", (K + 1, H), init=rng.uniform(-s, s, size=(K + 1, H)))
        self.config = config
        self.store = store
        self._r_name = "r"

    def encode_utterance(self, x_ids) -> dc.Node:
        ids = self._check_ids(x_ids, "utterance")
        H = self.config.hidden_dim
        e = self.store.embedding_rows("emb2", ids)
        xproj = dc.matmul(e, self.store.param("enc2.Wx"))
        hs = dc.lstm_sequence(xproj, dc.constant(np.zeros((1, H))), self.store, "enc2")
        return dc.reshape(dc.index_axis0(hs, len(ids) - 1), (H,))

    def context_logprobs(self, ctx_ids) -> dc.Node:
        """Log p(z | concatenated user utterances), shape (K,)."""
        ids = self._check_ids(ctx_ids, "context")
        H = self.config.hidden_dim
        e = self.store.embedding_rows("emb", ids)
        xproj = dc.matmul(e, self.store.param("ctx.Wx"))
        hs = dc.lstm_sequence(xproj, dc.constant(np.zeros((1, H))), self.store, "ctx")
        h = dc.reshape(dc.index_axis0(hs, len(ids) - 1), (H,))
        return dc.log_softmax(dc.affine(h, "cls.W", "cls.b", self.store))

    def save(self, path, extra_meta: dict | None = None):
        meta = {"kind": "split"}
        if extra_meta:
            meta.update(extra_meta)
        super().save(path, meta)


def _contexts(dialog: EncodedDialog, include_agent: bool = False) -> list[np.ndarray]:
    """Token context for each turn i: the user utterances x_{1:i}, optionally
    interleaved with the preceding agent responses y_{1:i-1}."""
    out, acc = [], []
    for x, y in zip(dialog.users, dialog.agents):
        acc.extend(x)
        out.append(np.array(acc, dtype=np.int64))
        if include_agent:
            acc.extend(y)
    return out


def phase1_posterior(dialog: EncodedDialog, model: SplitModel,
                     include_agent: bool = False) -> list[np.ndarray]:
    """Per-turn log q(z_i) from one Bayes normalization each."""
    with dc.no_grad():
        out = []
        for ctx, y in zip(_contexts(dialog, include_agent), dialog.agents):
            lq = model.context_logprobs(ctx).value + model.emission_scores(y).value
            out.append(lq - dc.logsumexp(lq, axis=None))
    return out


def phase1_objective(dialog: EncodedDialog, model: SplitModel,
                     qs: list[np.ndarray],
                     include_agent: bool = False) -> dc.Node:
    """Expected complete log-likelihood, q constant; differentiable."""
    if len(qs) != dialog.n_turns:
        raise ValueError("posterior/turn count mismatch")
    total = None
    for ctx, y, log_q in zip(_contexts(dialog, include_agent), dialog.agents, qs):
        scores = dc.add(model.context_logprobs(ctx), model.emission_scores(y))
        term = dc.dot_const(scores, np.exp(log_q))
        total = term if total is None else dc.add(total, term)
    return total


def phase1_loglik(dialog: EncodedDialog, model: SplitModel,
                  include_agent: bool = False) -> float:
    """Per-dialog log p(y_i | context_i) with z_i marginalized, summed."""
    with dc.no_grad():
        total = 0.0
        for ctx, y in zip(_contexts(dialog, include_agent), dialog.agents):
            lq = model.context_logprobs(ctx).value + model.emission_scores(y).value
            total += dc.logsumexp(lq, axis=None)
    return total


def hard_assign(dialogs: list[EncodedDialog], model: SplitModel) -> dict[str, list[int]]:
    """z_hat = argmax_z p(y | z) per turn; ties break to the lowest id."""
    labels = {}
    with dc.no_grad():
        for d in dialogs:
            labels[d.id] = [int(np.argmax(model.emission_scores(y).value))
                            for y in d.agents]
    return labels


def phase2_objective(dialog: EncodedDialog, model: SplitModel,
                     labels: list[int]) -> dc.Node:
    """Supervised log-likelihood of the hard state path under the transition
    classifier (emissions not involved)."""
    if len(labels) != dialog.n_turns:
        raise ValueError("label/turn count mismatch")
    K = model.K
    total = None
    row = K  # START
    for x, z in zip(dialog.users, labels):
        term = dc.index_axis0(dc.index_axis0(model.transition_matrix(x), row), int(z))
        total = term if total is None else dc.add(total, term)
        row = int(z)
    return total


@dataclass
class BaselineResult:
    model: SplitModel
    vocab: Vocabulary
    phase1_log: list[dict] = field(default_factory=list)
    phase2_log: list[dict] = field(default_factory=list)
    train_labels: dict[str, list[int]] = field(default_factory=dict)
    best_dev_ppl: float = float("inf")
    diverged: bool = False


def train_phase1(train_enc, dev_enc, model: SplitModel, config: TrainConfig,
                 rng: np.random.Generator, log: list[dict],
                 include_agent: bool = False) -> tuple[bool, dict]:
    """EM over the per-turn latent; returns (diverged, best snapshot)."""
    names = _names_with_prefix(model.store, PHASE1_PREFIXES)

    def dev_ppl():
        ll = sum(phase1_loglik(d, model, include_agent) for d in dev_enc)
        toks = sum(d.n_agent_tokens for d in dev_enc)
        return float(np.exp(-ll / max(toks, 1))), ll

    t0 = time.perf_counter()
    best = {"ppl": float("inf"), "values": model.store.copy_values()}
    ppl, ll = dev_ppl()
    best.update(ppl=ppl, values=model.store.copy_values())
    log.append({"phase": 1, "epoch": 0, "elbo": None, "dev_loglik": round(ll, 6),
                "dev_ppl": round(ppl, 6),
                "wall_ms": int(1000 * (time.perf_counter() - t0))})
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_enc))
        elbos = []
        for lo in range(0, len(order), config.batch_size):
            batch = [train_enc[j] for j in order[lo:lo + config.batch_size]]
            qs = [phase1_posterior(d, model, include_agent) for d in batch]
            for m_step in range(config.m_steps_per_e_step):
                objective = None
                for d, q in zip(batch, qs):
                    f = phase1_objective(d, model, q, include_agent)
                    objective = f if objective is None else dc.add(objective, f)
                    if m_step == 0:
                        h = -sum(float(np.sum(np.exp(lq) * lq)) for lq in q)
                        elbos.append(float(f.value) + h)
                objective = dc.scale(objective, 1.0 / len(batch))
                if not np.isfinite(objective.value):
                    model.store.load_values(best["values"])
                    return True, best
                dc.scale(objective, -1.0).backward()
                dc.adam_update(model.store, config.learning_rate, params=names)
        ppl, ll = dev_ppl()
        if ppl < best["ppl"]:
            best.update(ppl=ppl, values=model.store.copy_values())
        log.append({"phase": 1, "epoch": epoch,
                    "elbo": round(float(np.mean(elbos)), 6),
                    "dev_loglik": round(ll, 6), "dev_ppl": round(ppl, 6),
                    "wall_ms": int(1000 * (time.perf_counter() - t0))})
    model.store.load_values(best["values"])
    return False, best


def train_phase2(train_enc, dev_enc, model: SplitModel, config: TrainConfig,
                 labels: dict[str, list[int]], dev_labels: dict[str, list[int]],
                 rng: np.random.Generator, log: list[dict]) -> bool:
    """Supervised transition training on the hard labels; emissions frozen."""
    names = _names_with_prefix(model.store, PHASE2_PREFIXES)

    def dev_ce():
        with dc.no_grad():
            tot, n = 0.0, 0
            for d in dev_enc:
                tot -= float(phase2_objective(d, model, dev_labels[d.id]).value)
                n += d.n_turns
        return tot / max(n, 1)

    t0 = time.perf_counter()
    best = {"ce": dev_ce(), "values": model.store.copy_values()}
    log.append({"phase": 2, "epoch": 0, "train_ce": None,
                "dev_ce": round(best["ce"], 6),
                "wall_ms": int(1000 * (time.perf_counter() - t0))})
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_enc))
        ces = []
        for lo in range(0, len(order), config.batch_size):
            batch = [train_enc[j] for j in order[lo:lo + config.batch_size]]
            objective = None
            for d in batch:
                f = phase2_objective(d, model, labels[d.id])
                objective = f if objective is None else dc.add(objective, f)
            objective = dc.scale(objective, 1.0 / len(batch))
            ces.append(-float(objective.value))
            if not np.isfinite(objective.value):
                model.store.load_values(best["values"])
                return True
            dc.scale(objective, -1.0).backward()
            dc.adam_update(model.store, config.learning_rate, params=names)
        ce = dev_ce()
        if ce < best["ce"]:
            best.update(ce=ce, values=model.store.copy_values())
        log.append({"phase": 2, "epoch": epoch,
                    "train_ce": round(float(np.mean(ces)), 6),
                    "dev_ce": round(ce, 6),
                    "wall_ms": int(1000 * (time.perf_counter() - t0))})
    model.store.load_values(best["values"])
    return False


def train_baseline(corpus: CorpusSplit, config: TrainConfig,
                   vocab: Vocabulary | None = None,
                   include_agent_context: bool = False) -> BaselineResult:
    """Run both phases and return an inference-ready model.

    ``include_agent_context`` widens the phase-1 context from the user
    utterances alone to the full conversation so far.
    """
    if not corpus.train or not corpus.dev:
        raise ValueError("training requires non-empty train and dev splits")
    if vocab is None:
        vocab = build_vocab(corpus.train, min_count=config.min_count)
    train_enc = [encode_dialog(d, vocab) for d in corpus.train]
    dev_enc = [encode_dialog(d, vocab) for d in corpus.dev]
    model = SplitModel(
        ModelConfig(vocab_size=len(vocab), K=config.K,
                    embedding_dim=config.embedding_dim,
                    hidden_dim=config.hidden_dim,
                    max_decode_len=config.max_decode_len, vocab_sha=vocab.sha),
        seed=config.seed)
    result = BaselineResult(model=model, vocab=vocab)
    rng = np.random.default_rng(config.seed)

    diverged, best = train_phase1(train_enc, dev_enc, model, config, rng,
                                  result.phase1_log,
                                  include_agent=include_agent_context)
    result.best_dev_ppl = best["ppl"]
    if diverged:
        result.diverged = True
        return result

    result.train_labels = hard_assign(train_enc, model)
    dev_labels = hard_assign(dev_enc, model)
    result.diverged = train_phase2(train_enc, dev_enc, model, config,
                                   result.train_labels, dev_labels, rng,
                                   result.phase2_log)
    return result
