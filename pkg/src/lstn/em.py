"""Exact-posterior EM training.

The posterior over state sequences factorizes into per-turn conditional
tables q_i(z_i | z_{i-1}) computed by a backward dynamic program (E-step).
The M-step objective f_1 is the expected complete-data log-likelihood,
assembled by a second backward recursion in which the q tables are constants
and gradients flow only into the transition and emission parameters.  One
E-step is followed by a configurable number of gradient M-steps (generalized
EM).  All dynamic programming is in log space.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .corpus import CorpusSplit, EncodedDialog, Vocabulary, build_vocab, encode_dialog
from .errors import NumericalError

LR_GRID = (0.01, 0.001, 0.0001)
EMBED_GRID = (16, 32, 64)
K_GRID = (8, 16, 32, 64, 128)


@dataclass
class PosteriorTable:
    """Per-turn conditional posteriors, log-space.

    ``log_q[0]`` has shape (1, K) (the START predecessor); later entries are
    (K, K) with rows indexed by the predecessor state.  Every row exp-sums
    to 1.
    """

    log_q: list[np.ndarray]

    @property
    def n_turns(self) -> int:
        return len(self.log_q)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    embedding_dim: int = 32
    hidden_dim: int = 32
    K: int = 8
    shared_state_embeddings: bool = False
    batch_size: int = 16
    epochs: int = 15
    seed: int = 0
    m_steps_per_e_step: int = 1
    min_count: int = 1
    max_decode_len: int = 40
    state_init_scale: float = 0.08
    allow_off_grid: bool = False

    def __post_init__(self):
        if self.allow_off_grid:
            return
        if self.learning_rate not in LR_GRID:
            raise ValueError(
                f"learning_rate {self.learning_rate} not in grid {LR_GRID}; "
                "set allow_off_grid to override")
        if self.embedding_dim not in EMBED_GRID:
            raise ValueError(
                f"embedding_dim {self.embedding_dim} not in grid {EMBED_GRID}; "
                "set allow_off_grid to override")
        if self.K not in K_GRID:
            raise ValueError(
                f"K {self.K} not in grid {K_GRID}; set allow_off_grid to override")


def _factor_values(model, dialog: EncodedDialog):
    """Transition matrices (K+1, K) and emission score vectors (K,) per turn,
    as plain arrays (no gradient graph)."""
    with dc.no_grad():
        trans = [model.transition_matrix(x).value for x in dialog.users]
        emis = [model.emission_scores(y).value for y in dialog.agents]
    return trans, emis


def e_step(dialog: EncodedDialog, model) -> PosteriorTable:
    """Backward recursion for the factorized posterior; no gradients."""
    if dialog.n_turns == 0:
        raise ValueError("dialog has no turns")
    K = model.K
    trans, emis = _factor_values(model, dialog)
    n = dialog.n_turns
    log_q: list[np.ndarray] = [None] * n
    msg = None  # logsumexp over z_{i+1} of b_{i+1}(z_i, .), indexed by z_i
    for i in range(n - 1, -1, -1):
        rows = trans[i][K:K + 1] if i == 0 else trans[i][:K]
        log_b = rows + emis[i][None, :]
        if msg is not None:
            log_b = log_b + msg[None, :]
        norm = dc.logsumexp(log_b, axis=1)
        if not np.all(np.isfinite(norm)):
            raise NumericalError("backward recursion produced a non-finite row",
                                 turn=i + 1)
        log_q[i] = log_b - norm[:, None]
        msg = norm
    return PosteriorTable(log_q)


def m_step_objective(dialog: EncodedDialog, model, q: PosteriorTable) -> dc.Node:
    """Differentiable expected complete-data log-likelihood f_1 (a scalar).

    The q tables enter as constants; gradients flow through the transition
    and emission factors only.
    """
    if q.n_turns != dialog.n_turns:
        raise ValueError(
            f"posterior covers {q.n_turns} turns, dialog has {dialog.n_turns}")
    K = model.K
    f = None  # Node (K,): f_{i+1} over z_i
    for i in range(dialog.n_turns - 1, -1, -1):
        t_mat = model.transition_matrix(dialog.users[i])
        e_vec = model.emission_scores(dialog.agents[i])
        n_rows = 1 if i == 0 else K
        rows = dc.slice_rows(t_mat, K, K + 1) if i == 0 else dc.slice_rows(t_mat, 0, K)
        scores = dc.add(rows, dc.broadcast_rows(e_vec, n_rows))
        if f is not None:
            scores = dc.add(scores, dc.broadcast_rows(f, n_rows))
        f = dc.row_sum(dc.mul_const(scores, np.exp(q.log_q[i])))
    return dc.sum_all(f)


def posterior_entropy(q: PosteriorTable) -> float:
    """Entropy of the factorized posterior: sum over turns of the conditional
    row entropies weighted by the forward marginal of the predecessor."""
    total = 0.0
    mu = None  # marginal over z_{i-1}; None = point mass on START
    for log_row in q.log_q:
        p = np.exp(log_row)
        row_h = -np.sum(np.where(p > 0, p * log_row, 0.0), axis=1)
        if mu is None:
            total += float(row_h[0])
            mu = p[0]
        else:
            total += float(mu @ row_h)
            mu = mu @ p
    return total


def elbo_value(dialog: EncodedDialog, model, q: PosteriorTable) -> float:
    """Evidence lower bound f_1 + H(q); equals the marginal log-likelihood
    when q comes fresh from e_step on the same parameters."""
    return float(m_step_objective(dialog, model, q).value) + posterior_entropy(q)


def marginal_loglik(dialog: EncodedDialog, model) -> float:
    """Forward-algorithm log p(y_{1:N} | x_{1:N}) with states marginalized."""
    if dialog.n_turns == 0:
        raise ValueError("dialog has no turns")
    K = model.K
    trans, emis = _factor_values(model, dialog)
    alpha = trans[0][K] + emis[0]
    if not np.isfinite(dc.logsumexp(alpha, axis=None)):
        raise NumericalError("non-finite forward value", turn=1)
    for i in range(1, dialog.n_turns):
        alpha = emis[i] + dc.logsumexp(alpha[:, None] + trans[i][:K], axis=0)
        if not np.isfinite(dc.logsumexp(alpha, axis=None)):
            raise NumericalError("non-finite forward value", turn=i + 1)
    return float(dc.logsumexp(alpha, axis=None))


def dev_scores(dialogs: list[EncodedDialog], model) -> tuple[float, float]:
    """Total marginal log-likelihood and token-level perplexity."""
    total_ll = 0.0
    total_tokens = 0
    for d in dialogs:
        total_ll += marginal_loglik(d, model)
        total_tokens += d.n_agent_tokens
    ppl = float(np.exp(-total_ll / max(total_tokens, 1)))
    return total_ll, ppl


@dataclass
class TrainResult:
    model: object
    vocab: Vocabulary
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_ppl: float = float("inf")
    diverged: bool = False


def train(corpus: CorpusSplit, config: TrainConfig,
          vocab: Vocabulary | None = None) -> TrainResult:
    """Generalized-EM training loop.

    Per batch: one E-step per dialog at the current parameters, then
    ``m_steps_per_e_step`` Adam steps on the negated mean objective.  Returns
    the parameters with the best dev perplexity; training aborts on a
    non-finite loss and keeps the last good snapshot.
    """
    from .model import LstnModel, ModelConfig

    if not corpus.train or not corpus.dev:
        raise ValueError("training requires non-empty train and dev splits")
    if vocab is None:
        vocab = build_vocab(corpus.train, min_count=config.min_count)
    train_enc = [encode_dialog(d, vocab) for d in corpus.train]
    dev_enc = [encode_dialog(d, vocab) for d in corpus.dev]

    model = LstnModel(
        ModelConfig(
            vocab_size=len(vocab), K=config.K,
            embedding_dim=config.embedding_dim, hidden_dim=config.hidden_dim,
            shared_state_embeddings=config.shared_state_embeddings,
            max_decode_len=config.max_decode_len,
            state_init_scale=config.state_init_scale, vocab_sha=vocab.sha),
        seed=config.seed)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model=model, vocab=vocab)

    def snapshot_if_best(epoch: int, ppl: float):
        nonlocal best_values
        if ppl < result.best_dev_ppl:
            result.best_dev_ppl = ppl
            result.best_epoch = epoch
            best_values = model.store.copy_values()

    t0 = time.perf_counter()
    dev_ll, dev_ppl = dev_scores(dev_enc, model)
    best_values = model.store.copy_values()
    snapshot_if_best(0, dev_ppl)
    result.log.append({"epoch": 0, "elbo": None, "dev_loglik": round(dev_ll, 6),
                       "dev_ppl": round(dev_ppl, 6),
                       "wall_ms": int(1000 * (time.perf_counter() - t0))})

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_enc))
        elbos = []
        for lo in range(0, len(order), config.batch_size):
            batch = [train_enc[j] for j in order[lo:lo + config.batch_size]]
            qs = [e_step(d, model) for d in batch]
            for m_step in range(config.m_steps_per_e_step):
                objective = None
                for d, q in zip(batch, qs):
                    f1 = m_step_objective(d, model, q)
                    objective = f1 if objective is None else dc.add(objective, f1)
                    if m_step == 0:
                        elbos.append(float(f1.value) + posterior_entropy(q))
                objective = dc.scale(objective, 1.0 / len(batch))
                if not np.isfinite(objective.value):
                    model.store.load_values(best_values)
                    result.diverged = True
                    result.log.append({"epoch": epoch, "elbo": None,
                                       "dev_loglik": None, "dev_ppl": None,
                                       "wall_ms": int(1000 * (time.perf_counter() - t0)),
                                       "aborted": True})
                    return result
                loss = dc.scale(objective, -1.0)
                loss.backward()
                dc.adam_update(model.store, config.learning_rate)
        dev_ll, dev_ppl = dev_scores(dev_enc, model)
        snapshot_if_best(epoch, dev_ppl)
        result.log.append({"epoch": epoch, "elbo": round(float(np.mean(elbos)), 6),
                           "dev_loglik": round(dev_ll, 6),
                           "dev_ppl": round(dev_ppl, 6),
                           "wall_ms": int(1000 * (time.perf_counter() - t0))})

    model.store.load_values(best_values)
    return result


def save_training_log(log: list[dict], path):
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for rec in log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
