"""CLI behavior: the synth/train/eval/export pipeline on a tiny corpus,
config resolution with --set overrides, exit codes, and run manifests."""

import json
import shutil
import subprocess
import sys

import pytest
import yaml

from lstn.cli import load_run_config, main
from lstn.corpus import Vocabulary, build_vocab, load_corpus
from lstn.interpret import graph_from_jsonl

TINY = ["--set", "n_dialogs=40", "--set", "max_turns=4",
        "--set", "K=3", "--set", "embedding_dim=8", "--set", "hidden_dim=8",
        "--set", "epochs=2", "--set", "batch_size=8",
        "--set", "beam_size=3", "--set", "max_decode_len=10",
        "--set", "min_edge_count=1", "--set", "allow_off_grid=true",
        "--set", "seed=0"]


def _run(command, out_dir, *extra):
    return main([command, *TINY, "--set", f"out_dir={out_dir}", *extra])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth -> train -> eval -> export-tree run shared by the tests."""
    out = tmp_path_factory.mktemp("run")
    for command in ("synth", "train", "eval", "export-tree"):
        assert _run(command, out) == 0, command
    return out


def test_synth_artifacts(pipeline):
    assert (pipeline / "corpus.jsonl").exists()
    assert (pipeline / "labels.jsonl").exists()
    assert (pipeline / "machine.yaml").exists()
    split = load_corpus(pipeline / "corpus.jsonl")
    assert len(split.all_dialogs()) == 40


def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("synth", a) == 0
    assert _run("synth", b) == 0
    for name in ("corpus.jsonl", "labels.jsonl", "machine.yaml"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_preprocess_artifacts(pipeline, tmp_path):
    rc = _run("preprocess", tmp_path, "--set",
              f"corpus={pipeline / 'corpus.jsonl'}")
    assert rc == 0
    assert (tmp_path / "processed.jsonl").exists()
    vocab = Vocabulary.load(tmp_path / "vocab.json")
    assert len(vocab) > 4


def test_train_artifacts(pipeline):
    assert (pipeline / "checkpoint.npz").exists()
    assert (pipeline / "vocab.json").exists()
    lines = (pipeline / "train_log.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert all("epoch" in r for r in records)


def test_eval_report_files(pipeline):
    report = json.loads((pipeline / "eval_report.json").read_text())
    for key in ("bleu", "recoverability", "dataset", "config_hash"):
        assert key in report
    txt = (pipeline / "eval_report.txt").read_text()
    assert "BLEU" in txt


def test_export_tree_files(pipeline):
    graph = graph_from_jsonl((pipeline / "graph.jsonl").read_text())
    assert graph.nodes
    dot = (pipeline / "graph.dot").read_text()
    assert dot.startswith("digraph")


def test_manifest_and_resolved_config(pipeline):
    manifest = json.loads((pipeline / "manifest.json").read_text())
    # the last pipeline step owns the manifest
    assert manifest["command"] == "export-tree"
    assert "graph.jsonl" in manifest["artifacts"]
    assert manifest["artifacts"] == sorted(manifest["artifacts"])
    assert "manifest.json" in manifest["artifacts"]
    resolved = yaml.safe_load((pipeline / "resolved_config.yaml").read_text())
    assert resolved["K"] == 3
    assert resolved["out_dir"] == str(pipeline)
    assert resolved["allow_off_grid"] is True


def test_sweep_k_tiny(pipeline, tmp_path):
    rc = _run("sweep-k", tmp_path,
              "--set", f"corpus={pipeline / 'corpus.jsonl'}",
              "--set", "k_values=1,2", "--set", "epochs=1")
    assert rc == 0
    tsv = (tmp_path / "sweep.tsv").read_text().splitlines()
    assert len(tsv) == 2
    assert all(line.split("\t")[0] in ("1", "2") for line in tsv)
    rows = json.loads((tmp_path / "sweep.json").read_text())
    assert [r["K"] for r in rows] == [1, 2]


def test_gradcheck_passes(capsys):
    rc = main(["gradcheck", "--set", "K=3", "--set", "embedding_dim=6",
               "--set", "hidden_dim=5", "--set", "max_turns=3",
               "--set", "allow_off_grid=true", "--set", "seed=0"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "max relative gradient error" in out


def test_set_override_types():
    cfg = load_run_config(None, ["K=5", "learning_rate=0.5",
                                 "length_normalize=true", "lexicon=lex.json"])
    assert cfg.K == 5 and isinstance(cfg.K, int)
    assert cfg.learning_rate == 0.5
    assert cfg.length_normalize is True
    assert cfg.lexicon == "lex.json"


def test_config_file_with_override_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"K": 4, "epochs": 3}))
    cfg = load_run_config(str(path), ["K=6"])
    assert cfg.K == 6
    assert cfg.epochs == 3


def test_unknown_config_key_exits_1(capsys):
    assert main(["synth", "--set", "bogus=1"]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_bad_override_shape_exits_1(capsys):
    assert main(["synth", "--set", "K"]) == 1
    assert "key=value" in capsys.readouterr().err


def test_missing_corpus_exits_1(tmp_path, capsys):
    assert main(["train", "--set", f"out_dir={tmp_path}"]) == 1
    err = capsys.readouterr().err
    assert "corpus" in err and str(tmp_path) in err


def test_missing_checkpoint_exits_1(tmp_path, capsys):
    assert main(["eval", "--set", f"out_dir={tmp_path}"]) == 1
    assert "checkpoint" in capsys.readouterr().err


def test_vocab_checkpoint_mismatch_exits_1(pipeline, tmp_path, capsys):
    shutil.copy(pipeline / "checkpoint.npz", tmp_path / "checkpoint.npz")
    shutil.copy(pipeline / "corpus.jsonl", tmp_path / "corpus.jsonl")
    split = load_corpus(pipeline / "corpus.jsonl")
    build_vocab(split.train, min_count=4).save(tmp_path / "vocab.json")
    rc = _run("eval", tmp_path)
    assert rc == 1
    assert "does not match" in capsys.readouterr().err


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_console_entry_point(tmp_path):
    exe = shutil.which("lstn")
    cmd = [exe] if exe else [sys.executable, "-m", "lstn.cli"]
    proc = subprocess.run(
        cmd + ["synth", "--set", "n_dialogs=12", "--set", "seed=1",
               "--set", f"out_dir={tmp_path}"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "wrote 12 dialogs" in proc.stdout
