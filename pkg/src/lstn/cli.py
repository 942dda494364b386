"""Command-line interface.

Every subcommand reads a flat YAML config (all keys optional, see RunConfig)
plus repeatable ``--set key=value`` overrides, and writes its artifacts under
``out_dir`` together with the resolved config and a manifest.  Exit codes:
0 success, 1 runtime failure (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import diffcore as dc
from . import em
from .baseline import train_baseline
from .corpus import (CorpusSplit, EntityLexicon, Vocabulary, anonymize,
                     build_vocab, encode_dialog, load_corpus, save_corpus)
from .errors import LstnError
from .evaluation import EvalReport, evaluate, k_sweep, write_report, write_sweep
from .inference import build_response_cache
from .interpret import export_flow_graph, graph_from_jsonl, mine_intents, write_flow_graph
from .model import load_model
from .synth import OracleMachine, default_machine, generate_corpus, save_labels


@dataclass
class RunConfig:
    # training
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
    # data
    corpus: str = ""
    corpus_format: str = "jsonl"
    lexicon: str = ""
    vocab: str = ""
    dataset_name: str = "synth-default"
    eval_split: str = "test"
    # synthetic generator
    machine: str = ""
    n_dialogs: int = 500
    max_turns: int = 5
    # inference and artifacts
    checkpoint: str = ""
    beam_size: int = 10
    length_normalize: bool = False
    min_edge_count: int = 5
    top_r: int = 3
    k_values: str = "1,8,16,64"
    out_dir: str = "runs/run"
    # serving
    host: str = "127.0.0.1"
    port: int = 8000
    session_ttl: float = 3600.0
    static_dir: str = ""

    def train_config(self) -> em.TrainConfig:
        return em.TrainConfig(
            learning_rate=self.learning_rate, embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim, K=self.K,
            shared_state_embeddings=self.shared_state_embeddings,
            batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
            m_steps_per_e_step=self.m_steps_per_e_step, min_count=self.min_count,
            max_decode_len=self.max_decode_len,
            state_init_scale=self.state_init_scale,
            allow_off_grid=self.allow_off_grid)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    if ftype in ("bool", bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    return raw


def load_run_config(path: str | None, overrides: list[str]) -> RunConfig:
    values: dict = {}
    if path:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"config file {path} must hold a mapping")
        for key, val in raw.items():
            if key not in _FIELD_TYPES:
                raise ValueError(f"unknown config key {key!r} in {path}")
            values[key] = val
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw_val = item.split("=", 1)
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, raw_val)
    return RunConfig(**values)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_files(cfg: RunConfig, out: Path, command: str, artifacts: list[str]):
    (out / "resolved_config.yaml").write_text(
        yaml.safe_dump(asdict(cfg), sort_keys=True), encoding="utf-8")
    manifest = {"command": command,
                "artifacts": sorted(set(artifacts + ["resolved_config.yaml",
                                                     "manifest.json"]))}
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _corpus_path(cfg: RunConfig, out: Path) -> Path:
    path = Path(cfg.corpus) if cfg.corpus else out / "corpus.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    return path


def _checkpoint_path(cfg: RunConfig, out: Path) -> Path:
    path = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoint.npz"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def _load_vocab(cfg: RunConfig, ckpt_path: Path) -> Vocabulary:
    path = Path(cfg.vocab) if cfg.vocab else ckpt_path.parent / "vocab.json"
    if not path.exists():
        raise FileNotFoundError(f"vocabulary file not found: {path}")
    return Vocabulary.load(path)


def _load_split(cfg: RunConfig, out: Path) -> CorpusSplit:
    split = load_corpus(_corpus_path(cfg, out), format=cfg.corpus_format)
    if cfg.lexicon:
        lexicon = EntityLexicon.load(cfg.lexicon)
        split = CorpusSplit(
            train=[anonymize(d, lexicon) for d in split.train],
            dev=[anonymize(d, lexicon) for d in split.dev],
            test=[anonymize(d, lexicon) for d in split.test])
    return split


def _eval_dialogs(cfg: RunConfig, split: CorpusSplit):
    part = getattr(split, cfg.eval_split, None)
    if part is None:
        raise ValueError(f"eval_split must be train/dev/test, got {cfg.eval_split!r}")
    if not part:
        raise ValueError(f"eval split {cfg.eval_split!r} is empty")
    return part


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    machine = OracleMachine.load(cfg.machine) if cfg.machine else default_machine()
    split, gold = generate_corpus(machine, n_dialogs=cfg.n_dialogs,
                                  max_turns=cfg.max_turns, seed=cfg.seed)
    save_corpus(split, out / "corpus.jsonl")
    save_labels(gold, out / "labels.jsonl")
    machine.save(out / "machine.yaml")
    _write_run_files(cfg, out, "synth",
                     ["corpus.jsonl", "labels.jsonl", "machine.yaml"])
    print(f"wrote {cfg.n_dialogs} dialogs "
          f"({len(split.train)}/{len(split.dev)}/{len(split.test)} "
          f"train/dev/test) to {out / 'corpus.jsonl'}")
    return 0


def cmd_preprocess(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    split = _load_split(cfg, out)
    vocab = build_vocab(split.train or split.all_dialogs(), min_count=cfg.min_count)
    save_corpus(split, out / "processed.jsonl")
    vocab.save(out / "vocab.json")
    _write_run_files(cfg, out, "preprocess", ["processed.jsonl", "vocab.json"])
    n_turns = sum(d.n_turns for d in split.all_dialogs())
    print(f"dialogs={len(split.all_dialogs())} turns={n_turns} vocab={len(vocab)}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    split = _load_split(cfg, out)
    result = em.train(split, cfg.train_config())
    result.vocab.save(out / "vocab.json")
    result.model.save(out / "checkpoint.npz",
                      extra_meta={"dataset": cfg.dataset_name})
    em.save_training_log(result.log, out / "train_log.jsonl")
    _write_run_files(cfg, out, "train",
                     ["checkpoint.npz", "vocab.json", "train_log.jsonl"])
    status = "diverged; kept last good checkpoint" if result.diverged else "ok"
    print(f"{status}: best dev ppl {result.best_dev_ppl:.4f} "
          f"at epoch {result.best_epoch}")
    return 0


def cmd_train_baseline(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    split = _load_split(cfg, out)
    result = train_baseline(split, cfg.train_config())
    result.vocab.save(out / "vocab.json")
    result.model.save(out / "checkpoint.npz",
                      extra_meta={"dataset": cfg.dataset_name})
    em.save_training_log(result.phase1_log + result.phase2_log,
                         out / "train_log.jsonl")
    _write_run_files(cfg, out, "train-baseline",
                     ["checkpoint.npz", "vocab.json", "train_log.jsonl"])
    status = "diverged; kept last good checkpoint" if result.diverged else "ok"
    print(f"{status}: phase-1 best dev ppl {result.best_dev_ppl:.4f}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    ckpt = _checkpoint_path(cfg, out)
    model, meta = load_model(ckpt)
    vocab = _load_vocab(cfg, ckpt)
    if model.config.vocab_sha and vocab.sha != model.config.vocab_sha:
        raise ValueError("vocabulary does not match the checkpoint "
                         f"({vocab.sha} != {model.config.vocab_sha})")
    split = _load_split(cfg, out)
    dialogs = [encode_dialog(d, vocab) for d in _eval_dialogs(cfg, split)]
    cache = build_response_cache(model, beam_size=cfg.beam_size,
                                 max_len=cfg.max_decode_len,
                                 length_normalize=cfg.length_normalize)
    report = evaluate(dialogs, model, cache, dataset=cfg.dataset_name,
                      config_hash=model.config_hash())
    write_report(report, out / "eval_report.json", out / "eval_report.txt")
    _write_run_files(cfg, out, "eval", ["eval_report.json", "eval_report.txt"])
    print(report.to_table(), end="")
    return 0


def cmd_sweep_k(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    split = _load_split(cfg, out)
    k_values = [int(k) for k in str(cfg.k_values).split(",") if k.strip()]
    rows = k_sweep(split, cfg.train_config(), k_values, beam_size=cfg.beam_size)
    write_sweep(rows, out / "sweep.tsv")
    (out / "sweep.json").write_text(
        json.dumps(rows, sort_keys=True) + "\n", encoding="utf-8")
    _write_run_files(cfg, out, "sweep-k", ["sweep.tsv", "sweep.json"])
    for row in rows:
        print(row)
    return 0


def cmd_export_tree(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    ckpt = _checkpoint_path(cfg, out)
    model, _ = load_model(ckpt)
    vocab = _load_vocab(cfg, ckpt)
    split = _load_split(cfg, out)
    cache = build_response_cache(model, beam_size=cfg.beam_size,
                                 max_len=cfg.max_decode_len,
                                 length_normalize=cfg.length_normalize)
    intents = mine_intents(split.train, model, vocab)
    graph = export_flow_graph(intents, cache, min_edge_count=cfg.min_edge_count,
                              top_r=cfg.top_r, vocab=vocab)
    write_flow_graph(graph, out / "graph.jsonl", out / "graph.dot")
    _write_run_files(cfg, out, "export-tree", ["graph.jsonl", "graph.dot"])
    print(f"graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges "
          f"(min_edge_count={cfg.min_edge_count})")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    machine = OracleMachine.load(cfg.machine) if cfg.machine else default_machine()
    split, _ = generate_corpus(machine, n_dialogs=12, max_turns=cfg.max_turns,
                               seed=cfg.seed)
    vocab = build_vocab(split.train)
    from .model import LstnModel, ModelConfig

    model = LstnModel(
        ModelConfig(vocab_size=len(vocab), K=cfg.K,
                    embedding_dim=cfg.embedding_dim, hidden_dim=cfg.hidden_dim,
                    shared_state_embeddings=cfg.shared_state_embeddings,
                    state_init_scale=cfg.state_init_scale),
        seed=cfg.seed)
    dialog = encode_dialog(split.train[0], vocab)
    q = em.e_step(dialog, model)

    def objective():
        return em.m_step_objective(dialog, model, q)

    err = dc.grad_check(objective, model.store,
                        rng=np.random.default_rng(cfg.seed))
    print(f"max relative gradient error: {err:.3e}")
    if err >= 1e-3:
        print("gradient check FAILED (threshold 1e-3)", file=sys.stderr)
        return 1
    return 0


def cmd_serve(cfg: RunConfig) -> int:
    import uvicorn

    from .service import ServiceContext, make_app, mount_static

    out = _out_dir(cfg)
    ckpt = _checkpoint_path(cfg, out)
    model, _ = load_model(ckpt)
    vocab = _load_vocab(cfg, ckpt)
    cache = build_response_cache(model, beam_size=cfg.beam_size,
                                 max_len=cfg.max_decode_len,
                                 length_normalize=cfg.length_normalize)
    intents = None
    graph_fallback = None
    corpus_file = Path(cfg.corpus) if cfg.corpus else out / "corpus.jsonl"
    if corpus_file.exists():
        split = _load_split(cfg, out)
        intents = mine_intents(split.train, model, vocab)
    elif (out / "graph.jsonl").exists():
        graph_fallback = graph_from_jsonl(
            (out / "graph.jsonl").read_text(encoding="utf-8"))
    lexicon = EntityLexicon.load(cfg.lexicon) if cfg.lexicon else None
    ctx = ServiceContext(model=model, cache=cache, vocab=vocab, intents=intents,
                         lexicon=lexicon, graph_fallback=graph_fallback,
                         session_ttl=cfg.session_ttl,
                         extra_meta={"dataset": cfg.dataset_name})
    app = make_app(ctx)
    if cfg.static_dir:
        mount_static(app, cfg.static_dir)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "train-baseline": cmd_train_baseline,
    "eval": cmd_eval,
    "sweep-k": cmd_sweep_k,
    "export-tree": cmd_export_tree,
    "gradcheck": cmd_gradcheck,
    "serve": cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lstn",
        description="latent-state dialog model: train, evaluate, inspect, serve")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", default=None,
                       help="YAML config file (flat keys, see RunConfig)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg)
    except (LstnError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
