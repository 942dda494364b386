"""Dialog corpus handling: loading, anonymization, tokenization, vocabulary.

Native corpus format is UTF-8 JSON lines, one dialog per line:

    {"id": "d0001", "split": "train", "turns": [{"user": "...", "agent": "..."}]}

``split`` is optional and defaults to ``train``.  A ``plain`` format is also
accepted: dialogs are blank-line-separated blocks of alternating user/agent
lines.  Entity lexicons are JSON lines of ``{"type": ..., "surface_forms":
[...]}``.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CorpusParseError, EmptyCorpusError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")

# split these off as standalone tokens; apostrophes stay inside words
_PUNCT = re.compile(r"([.,!?;:\"()\[\]])")


def tokenize(text: str) -> list[str]:
    """Lowercase, separate punctuation, split on whitespace."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


@dataclass(frozen=True)
class Turn:
    user: tuple[str, ...]
    agent: tuple[str, ...]


@dataclass(frozen=True)
class Dialog:
    id: str
    turns: tuple[Turn, ...]

    @property
    def n_turns(self) -> int:
        return len(self.turns)


@dataclass
class CorpusSplit:
    train: list[Dialog] = field(default_factory=list)
    dev: list[Dialog] = field(default_factory=list)
    test: list[Dialog] = field(default_factory=list)

    def all_dialogs(self) -> list[Dialog]:
        return self.train + self.dev + self.test


def make_dialog(dialog_id: str, turns: Iterable[tuple[str, str]]) -> Dialog:
    """Build a tokenized Dialog from raw (user, agent) text pairs."""
    toks = []
    for user, agent in turns:
        u, a = tokenize(user), tokenize(agent)
        if not u or not a:
            raise CorpusParseError(
                f"dialog {dialog_id!r}: empty utterance after tokenization")
        toks.append(Turn(tuple(u), tuple(a)))
    if not toks:
        raise CorpusParseError(f"dialog {dialog_id!r} has no turns")
    return Dialog(dialog_id, tuple(toks))


def _parse_jsonl(path: Path) -> CorpusSplit:
    split = CorpusSplit()
    buckets = {"train": split.train, "dev": split.dev, "test": split.test}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"invalid JSON ({exc.msg})", line_no) from exc
            if not isinstance(rec, dict) or "turns" not in rec:
                raise CorpusParseError("record must be an object with 'turns'", line_no)
            where = rec.get("split", "train")
            if where not in buckets:
                raise CorpusParseError(f"unknown split {where!r}", line_no)
            try:
                pairs = [(t["user"], t["agent"]) for t in rec["turns"]]
            except (TypeError, KeyError) as exc:
                raise CorpusParseError(
                    "each turn needs 'user' and 'agent' strings", line_no) from exc
            try:
                dialog = make_dialog(str(rec.get("id", f"d{line_no:05d}")), pairs)
            except CorpusParseError as exc:
                raise CorpusParseError(str(exc), line_no) from exc
            buckets[where].append(dialog)
    return split


def _parse_plain(path: Path) -> CorpusSplit:
    split = CorpusSplit()
    block: list[str] = []
    block_start = 1
    n = 0

    def flush(at_line: int):
        nonlocal n
        if not block:
            return
        if len(block) % 2 != 0:
            raise CorpusParseError(
                "dialog block has a user utterance with no agent reply", at_line)
        pairs = list(zip(block[0::2], block[1::2]))
        n += 1
        split.train.append(make_dialog(f"d{n:05d}", pairs))
        block.clear()

    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                flush(line_no - 1)
                block_start = line_no + 1
                continue
            if not block:
                block_start = line_no
            block.append(stripped)
    flush(block_start + len(block) - 1)
    return split


def load_corpus(path: str | Path, format: str = "jsonl") -> CorpusSplit:
    """Load and tokenize a corpus file; see the module docstring for formats."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    if format == "jsonl":
        split = _parse_jsonl(path)
    elif format == "plain":
        split = _parse_plain(path)
    else:
        raise ValueError(f"unknown corpus format {format!r}")
    if not split.all_dialogs():
        raise EmptyCorpusError(f"no dialogs found in {path}")
    ids = [d.id for d in split.all_dialogs()]
    if len(set(ids)) != len(ids):
        raise CorpusParseError("duplicate dialog ids across splits")
    return split


def save_corpus(split: CorpusSplit, path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for name in ("train", "dev", "test"):
            for d in getattr(split, name):
                rec = {
                    "id": d.id,
                    "split": name,
                    "turns": [{"user": " ".join(t.user), "agent": " ".join(t.agent)}
                              for t in d.turns],
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def filter_dialogs(split: CorpusSplit, predicate) -> CorpusSplit:
    """Keep dialogs satisfying ``predicate(dialog)`` in every split."""
    return CorpusSplit(
        train=[d for d in split.train if predicate(d)],
        dev=[d for d in split.dev if predicate(d)],
        test=[d for d in split.test if predicate(d)],
    )


# ---------------------------------------------------------------------------
# anonymization


@dataclass
class EntityLexicon:
    """entity type -> surface forms; first-listed type wins on collisions."""

    entries: dict[str, list[tuple[str, ...]]]

    @classmethod
    def from_dict(cls, raw: dict[str, list[str]]) -> "EntityLexicon":
        entries: dict[str, list[tuple[str, ...]]] = {}
        seen: set[tuple[str, ...]] = set()
        for etype, forms in raw.items():
            kept = []
            for form in forms:
                toks = tuple(tokenize(form))
                if not toks or toks in seen:
                    continue
                seen.add(toks)
                kept.append(toks)
            # longest match first so multiword entities win over their prefixes
            kept.sort(key=lambda t: (-len(t), t))
            entries[etype] = kept
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "EntityLexicon":
        raw: dict[str, list[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    raw[rec["type"]] = list(rec["surface_forms"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CorpusParseError(
                        "lexicon records need 'type' and 'surface_forms'",
                        line_no) from exc
        return cls.from_dict(raw)

    def save(self, path: str | Path):
        with open(path, "w", encoding="utf-8") as fh:
            for etype, forms in self.entries.items():
                fh.write(json.dumps(
                    {"type": etype, "surface_forms": [" ".join(f) for f in forms]},
                    sort_keys=True) + "\n")

    def __bool__(self):
        return any(self.entries.values())


class AnonymizerState:
    """Tracks per-dialog first-appearance indices for each entity type."""

    def __init__(self, lexicon: EntityLexicon):
        self.lexicon = lexicon
        self.assigned: dict[tuple[str, tuple[str, ...]], str] = {}
        self.counts: Counter[str] = Counter()

    def replace(self, tokens: Sequence[str]) -> tuple[str, ...]:
        out: list[str] = []
        i = 0
        n = len(tokens)
        while i < n:
            match = None
            for etype, forms in self.lexicon.entries.items():
                for form in forms:
                    if tuple(tokens[i : i + len(form)]) == form:
                        if match is None or len(form) > len(match[1]):
                            match = (etype, form)
                        break  # forms are longest-first within a type
            if match is None:
                out.append(tokens[i])
                i += 1
                continue
            etype, form = match
            key = (etype, form)
            if key not in self.assigned:
                self.assigned[key] = f"{etype}_{self.counts[etype]}"
                self.counts[etype] += 1
            out.append(self.assigned[key])
            i += len(form)
        return tuple(out)


def anonymize(dialog: Dialog, lexicon: EntityLexicon) -> Dialog:
    """Replace entity mentions with ``type_k`` placeholders, indexed by first
    appearance within the dialog; consistent across all turns."""
    if not lexicon:
        raise ValueError("anonymize requires a non-empty lexicon")
    state = AnonymizerState(lexicon)
    turns = tuple(Turn(state.replace(t.user), state.replace(t.agent))
                  for t in dialog.turns)
    return Dialog(dialog.id, turns)


# ---------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]
    min_count: int

    def __len__(self):
        return len(self.id_to_token)

    @property
    def sha(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()[:16]

    def save(self, path: str | Path):
        blob = {"min_count": self.min_count, "tokens": list(self.id_to_token)}
        Path(path).write_text(json.dumps(blob, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
        tokens = tuple(blob["tokens"])
        return cls({t: i for i, t in enumerate(tokens)}, tokens, blob["min_count"])


def build_vocab(dialogs: Iterable[Dialog], min_count: int = 1) -> Vocabulary:
    """Frequency-thresholded vocabulary; ids are deterministic
    (frequency-descending, ties alphabetical) after the four reserved ids."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    n = 0
    for d in dialogs:
        n += 1
        for t in d.turns:
            counts.update(t.user)
            counts.update(t.agent)
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((tok for tok, c in counts.items() if c >= min_count),
                  key=lambda tok: (-counts[tok], tok))
    id_to_token = RESERVED_TOKENS + tuple(kept)
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token, min_count)


def encode(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    return [vocab.token_to_id.get(t, UNK) for t in tokens]


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    out = []
    for i in ids:
        if not 0 <= i < len(vocab):
            raise IndexError(f"token id {i} out of range for vocabulary of {len(vocab)}")
        out.append(vocab.id_to_token[i])
    return out


@dataclass(frozen=True)
class EncodedDialog:
    """Id sequences ready for the model; agent turns are EOS-terminated."""

    id: str
    users: tuple[tuple[int, ...], ...]
    agents: tuple[tuple[int, ...], ...]

    @property
    def n_turns(self) -> int:
        return len(self.users)

    @property
    def n_agent_tokens(self) -> int:
        return sum(len(a) for a in self.agents)


def encode_dialog(dialog: Dialog, vocab: Vocabulary) -> EncodedDialog:
    users = tuple(tuple(encode(t.user, vocab)) for t in dialog.turns)
    agents = tuple(tuple(encode(t.agent, vocab)) + (EOS,) for t in dialog.turns)
    return EncodedDialog(dialog.id, users, agents)


# ---------------------------------------------------------------------------
# best-effort adapters for public dataset layouts


def convert_smd(path: str | Path) -> list[Dialog]:
    """Stanford Multi-Domain json: list of {"dialogue": [{"turn", "data"}]}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    dialogs = []
    for i, entry in enumerate(raw):
        pairs: list[tuple[str, str]] = []
        pending_user: str | None = None
        for turn in entry.get("dialogue", []):
            speaker = turn.get("turn")
            utt = (turn.get("data", {}) or {}).get("utterance", "").strip()
            if not utt:
                continue
            if speaker == "driver":
                pending_user = utt if pending_user is None else f"{pending_user} {utt}"
            elif speaker == "assistant" and pending_user is not None:
                pairs.append((pending_user, utt))
                pending_user = None
        if pairs:
            dialogs.append(make_dialog(f"smd{i:05d}", pairs))
    return dialogs


def convert_camrest(path: str | Path) -> list[Dialog]:
    """CamRest676 json: list of {"dial": [{"usr": {"transcript"}, "sys": {"sent"}}]}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    dialogs = []
    for i, entry in enumerate(raw):
        pairs = []
        for turn in entry.get("dial", []):
            usr = ((turn.get("usr") or {}).get("transcript") or "").strip()
            sys = ((turn.get("sys") or {}).get("sent") or "").strip()
            if usr and sys:
                pairs.append((usr, sys))
        if pairs:
            dialogs.append(make_dialog(f"camrest{i:05d}", pairs))
    return dialogs
