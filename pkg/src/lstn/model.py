"""The latent-state dialog model.

A dialog is modeled turn by turn: a discrete state z_i in {0..K-1} evolves via
a softmax classifier over [encoded user utterance; previous state embedding],
and the agent response is generated by a word-level recurrent decoder whose
hidden state is initialized with the current state's embedding.  The previous
state of the first turn is a distinguished START symbol with its own embedding
row (never a reachable state).

All methods take encoded token-id sequences.  Probability arithmetic is in
log space throughout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .corpus import BOS, EOS

START_STATE = -1  # out-of-band predecessor-only marker


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    K: int
    embedding_dim: int = 32
    hidden_dim: int = 32
    shared_state_embeddings: bool = False
    max_decode_len: int = 40
    # init spread of the state-embedding rows; larger values give the E-step
    # distinct per-state emissions to latch onto (break the EM symmetry)
    state_init_scale: float = 0.08
    vocab_sha: str = ""

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.vocab_size < 5:
            raise ValueError("vocabulary must contain the 4 reserved tokens "
                             "plus at least one word")


class LstnModel:
    """Parameters plus the three conditional distributions of the model.

    Parameter layout in the store:
      emb (V, E) word embeddings shared by encoder and decoder;
      enc.* utterance-encoder cell; dec.* response-decoder cell;
      trans.W (K, 2H), trans.b (K,) transition classifier;
      v (K+1, H) state embeddings on the transition side, row K = START;
      r (K, H) state embeddings on the emission side (rows of v when shared);
      out.W (V, H), out.b (V,) decoder output projection.
    """

    def __init__(self, config: ModelConfig, store: dc.ParamStore | None = None,
                 seed: int = 0):
        self.config = config
        K, V = config.K, config.vocab_size
        E, H = config.embedding_dim, config.hidden_dim
        if store is None:
            store = dc.ParamStore()
            rng = np.random.default_rng(seed)
            store.add("emb", (V, E), rng=rng)
            dc.add_lstm_cell(store, "enc", E, H, rng)
            store.add("trans.W", (K, 2 * H), rng=rng)
            store.add("trans.b", (K,), rng=rng)
            s = config.state_init_scale
            store.add("v", (K + 1, H), init=rng.uniform(-s, s, size=(K + 1, H)))
            if not config.shared_state_embeddings:
                store.add("r", (K, H), init=rng.uniform(-s, s, size=(K, H)))
            dc.add_lstm_cell(store, "dec", E, H, rng)
            store.add("out.W", (V, H), rng=rng)
            store.add("out.b", (V,), rng=rng)
        self.store = store
        self._r_name = "v" if config.shared_state_embeddings else "r"

    @property
    def K(self) -> int:
        return self.config.K

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    # -- input checks -------------------------------------------------------

    def _check_ids(self, ids, what: str):
        arr = np.asarray(ids, dtype=np.int64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError(f"{what} must be a non-empty id sequence")
        if arr.min() < 0 or arr.max() >= self.vocab_size:
            raise IndexError(f"{what} contains ids outside [0, {self.vocab_size})")
        return arr

    def _check_state(self, z: int, allow_start: bool = False) -> int:
        if allow_start and z == START_STATE:
            return self.K  # START's row in the v table
        if not 0 <= z < self.K:
            raise IndexError(f"state {z} outside [0, {self.K})")
        return z

    # -- transition side ----------------------------------------------------

    def encode_utterance(self, x_ids) -> dc.Node:
        """Final hidden state of the encoder over the utterance, shape (H,)."""
        ids = self._check_ids(x_ids, "utterance")
        H = self.config.hidden_dim
        e = self.store.embedding_rows("emb", ids)
        xproj = dc.matmul(e, self.store.param("enc.Wx"))
        hs = dc.lstm_sequence(xproj, dc.constant(np.zeros((1, H))), self.store, "enc")
        return dc.reshape(dc.index_axis0(hs, len(ids) - 1), (H,))

    def transition_matrix(self, x_ids) -> dc.Node:
        """Log p(z | z_prev, x) for every predecessor: shape (K+1, K).

        Row K is the START predecessor; rows 0..K-1 are ordinary states.
        """
        K = self.K
        h = self.encode_utterance(x_ids)
        inp = dc.concat_cols(dc.broadcast_rows(h, K + 1), self.store.param("v"))
        logits = dc.add_rowvec(
            dc.matmul(inp, dc.transpose(self.store.param("trans.W"))),
            self.store.param("trans.b"))
        return dc.log_softmax_rows(logits)

    def transition_logprobs(self, z_prev: int, x_ids) -> np.ndarray:
        """Length-K log-probability vector for one predecessor (START = -1)."""
        row = self._check_state(z_prev, allow_start=True)
        with dc.no_grad():
            return np.array(self.transition_matrix(x_ids).value[row])

    # -- emission side ------------------------------------------------------

    def _check_response(self, y_ids) -> np.ndarray:
        ids = self._check_ids(y_ids, "response")
        if ids[-1] != EOS:
            raise ValueError("response id sequence must end with the "
                             "end-of-sequence token")
        return ids

    def _decode_scores(self, h0: dc.Node, y_ids: np.ndarray) -> dc.Node:
        """Teacher-forced log p(y | each h0 row); h0 (B, H) -> (B,)."""
        B = h0.value.shape[0]
        T = len(y_ids)
        in_ids = np.concatenate(([BOS], y_ids[:-1]))
        e = self.store.embedding_rows("emb", in_ids)
        xproj = dc.matmul(e, self.store.param("dec.Wx"))
        hs = dc.lstm_sequence(xproj, h0, self.store, "dec")  # (T, B, H)
        flat = dc.reshape(hs, (T * B, self.config.hidden_dim))
        logits = dc.add_rowvec(dc.matmul(flat, dc.transpose(self.store.param("out.W"))),
                               self.store.param("out.b"))
        logp = dc.log_softmax_rows(logits)
        picked = dc.gather_cols(logp, np.repeat(y_ids, B))
        return dc.sum_axis0(dc.reshape(picked, (T, B)))

    def emission_scores(self, y_ids) -> dc.Node:
        """Log p(y | z) for all K states at once, shape (K,)."""
        ids = self._check_response(y_ids)
        h0 = self.store.embedding_rows(self._r_name, np.arange(self.K))
        return self._decode_scores(h0, ids)

    def emission_logprob(self, y_ids, z: int) -> float:
        z = self._check_state(z)
        ids = self._check_response(y_ids)
        with dc.no_grad():
            h0 = self.store.embedding_rows(self._r_name, np.array([z]))
            return float(self._decode_scores(h0, ids).value[0])

    # stepwise decoding (plain numpy; callers hold no gradients here)

    def decoder_start(self, z_batch) -> tuple[np.ndarray, np.ndarray]:
        """Initial (h, c) for a batch of states, each (B, H)."""
        zs = np.asarray(z_batch, dtype=np.int64)
        if zs.size and (zs.min() < 0 or zs.max() >= self.K):
            raise IndexError(f"state batch outside [0, {self.K})")
        h = self.store.arrays[self._r_name][zs].copy()
        return h, np.zeros_like(h)

    def decoder_step(self, h: np.ndarray, c: np.ndarray, token_ids
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One decoder step: consume one token per row, return next states and
        the log-probability rows over the vocabulary."""
        sr = self.store.arrays
        toks = np.asarray(token_ids, dtype=np.int64)
        H = self.config.hidden_dim
        z = sr["emb"][toks] @ sr["dec.Wx"] + h @ sr["dec.Wh"] + sr["dec.b"]
        i = 1.0 / (1.0 + np.exp(-z[:, :H]))
        f = 1.0 / (1.0 + np.exp(-z[:, H:2 * H]))
        g = np.tanh(z[:, 2 * H:3 * H])
        o = 1.0 / (1.0 + np.exp(-z[:, 3 * H:]))
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        logits = h_new @ sr["out.W"].T + sr["out.b"]
        m = logits.max(axis=1, keepdims=True)
        logp = logits - (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))
        return h_new, c_new, logp

    def emission_next_token(self, prefix_ids, z: int) -> np.ndarray:
        """Log-probability vector over the vocabulary after consuming a
        response prefix (empty prefix allowed)."""
        z = self._check_state(z)
        prefix = np.asarray(prefix_ids, dtype=np.int64)
        if prefix.size and (prefix.min() < 0 or prefix.max() >= self.vocab_size):
            raise IndexError("prefix contains out-of-range ids")
        h, c = self.decoder_start([z])
        logp = None
        for tok in np.concatenate(([BOS], prefix)):
            h, c, logp = self.decoder_step(h, c, [tok])
        return logp[0]

    # -- joint ---------------------------------------------------------------

    def joint_logprob(self, dialog, zseq) -> float:
        """Log p(z_1..N, y_1..N | x_1..N) for one full state assignment."""
        if len(zseq) != dialog.n_turns:
            raise ValueError(
                f"state sequence length {len(zseq)} != {dialog.n_turns} turns")
        total = 0.0
        z_prev = START_STATE
        for x, y, z in zip(dialog.users, dialog.agents, zseq):
            z = self._check_state(z)
            total += float(self.transition_logprobs(z_prev, x)[z])
            total += self.emission_logprob(y, z)
            z_prev = z
        return total

    # -- persistence ----------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None):
        meta = {"model_config": asdict(self.config)}
        if extra_meta:
            meta.update(extra_meta)
        dc.save_checkpoint(self.store, path, meta)

    @classmethod
    def load(cls, path) -> tuple["LstnModel", dict]:
        store, meta = dc.load_checkpoint(path)
        config = ModelConfig(**meta["model_config"])
        return cls(config, store=store), meta

    def config_hash(self) -> str:
        return dc.config_hash(asdict(self.config))


def load_model(path) -> tuple[LstnModel, dict]:
    """Load either model flavor from a checkpoint; the pipelined baseline is
    tagged with kind="split" in the header."""
    store, meta = dc.load_checkpoint(path)
    config = ModelConfig(**meta["model_config"])
    if meta.get("kind") == "split":
        from .baseline import SplitModel

        return SplitModel(config, store=store), meta
    return LstnModel(config, store=store), meta
