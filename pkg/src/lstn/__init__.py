"""Latent-state dialog modeling.

A dialog model whose entire conversation context is a single discrete latent
state per turn, trained without state annotations via exact-posterior EM.
The package covers training, beam-search response caching, state tracking,
BLEU-based evaluation, a pipelined two-phase baseline, interpretability
exports (intent classes, dialog-flow graphs), a synthetic oracle corpus
generator, a CLI, and an HTTP service.
"""

from .corpus import (Dialog, CorpusSplit, EntityLexicon, Turn, Vocabulary,
                     anonymize, build_vocab, decode, encode, encode_dialog,
                     load_corpus, make_dialog, save_corpus, tokenize)
from .em import PosteriorTable, TrainConfig, TrainResult, e_step, elbo_value, \
    m_step_objective, marginal_loglik, posterior_entropy, train
from .errors import (CorpusParseError, GenerationError, InferenceError,
                     LstnError, NumericalError, ShapeError)
from .evaluation import EvalReport, bleu, end_to_end_bleu, evaluate, k_sweep, \
    recoverability
from .inference import (CacheEntry, ResponseCache, Session, StateMarginal,
                        build_response_cache, respond, session_step,
                        track_state)
from .interpret import (DialogFlowGraph, IntentClass, detect_duplicates,
                        export_flow_graph, graph_from_jsonl, graph_to_dot,
                        graph_to_jsonl, mine_intents)
from .model import START_STATE, LstnModel, ModelConfig, load_model
from .baseline import BaselineResult, SplitModel, train_baseline
from .synth import (OracleMachine, align_states, default_machine,
                    generate_corpus, load_labels, save_labels, state_recovery)

__version__ = "0.1.0"

__all__ = [
    "Dialog", "CorpusSplit", "EntityLexicon", "Turn", "Vocabulary",
    "anonymize", "build_vocab", "decode", "encode", "encode_dialog",
    "load_corpus", "make_dialog", "save_corpus", "tokenize",
    "PosteriorTable", "TrainConfig", "TrainResult", "e_step", "elbo_value",
    "m_step_objective", "marginal_loglik", "posterior_entropy", "train",
    "CorpusParseError", "GenerationError", "InferenceError", "LstnError",
    "NumericalError", "ShapeError",
    "EvalReport", "bleu", "end_to_end_bleu", "evaluate", "k_sweep",
    "recoverability",
    "CacheEntry", "ResponseCache", "Session", "StateMarginal",
    "build_response_cache", "respond", "session_step", "track_state",
    "DialogFlowGraph", "IntentClass", "detect_duplicates",
    "export_flow_graph", "graph_from_jsonl", "graph_to_dot",
    "graph_to_jsonl", "mine_intents",
    "START_STATE", "LstnModel", "ModelConfig", "load_model",
    "BaselineResult", "SplitModel", "train_baseline",
    "OracleMachine", "align_states", "default_machine", "generate_corpus",
    "load_labels", "save_labels", "state_recovery",
    "__version__",
]
