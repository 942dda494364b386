"""Ground-truth finite-state dialog generator.

An :class:`OracleMachine` is a small deterministic dialog machine: each latent
state owns a few agent response templates, user intents carry paraphrases, and
a transition table maps (state, intent) to the next state.  Corpora sampled
from a machine come with gold per-turn state labels, which makes every
downstream quantity (state recovery, flow-graph structure, attainable BLEU)
checkable by brute force.

Slot placeholders: a paraphrase or template token ``<new:cuisine>`` is filled
with ``cuisine_k`` where k counts distinct mentions of that type within the
dialog (first appearance = 0, matching the anonymization convention);
``<same:cuisine>`` repeats the most recent index.  Literal tokens such as
``cuisine_0`` pass through unchanged.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .corpus import CorpusSplit, Dialog, make_dialog
from .errors import GenerationError

START = "START"

_SLOT = re.compile(r"^<(new|same):([a-z_]+)>$")


@dataclass
class OracleMachine:
    """Deterministic dialog machine: states, templates, intents, transitions."""

    states: tuple[str, ...]
    templates: dict[str, list[str]]          # state -> 1..3 agent templates
    intents: dict[str, list[str]]            # intent -> 3..8 user paraphrases
    transitions: dict[str, dict[str, str]]   # state or START -> intent -> state

    def validate(self):
        if not self.states:
            raise GenerationError("machine has no states")
        if len(set(self.states)) != len(self.states):
            raise GenerationError("duplicate state names")
        if START in self.states:
            raise GenerationError(f"{START} is reserved and cannot be a state")
        for s in self.states:
            forms = self.templates.get(s, [])
            if not 1 <= len(forms) <= 3:
                raise GenerationError(
                    f"state {s!r} needs 1-3 response templates, has {len(forms)}")
        for intent, forms in self.intents.items():
            if not 3 <= len(forms) <= 8:
                raise GenerationError(
                    f"intent {intent!r} needs 3-8 paraphrases, has {len(forms)}")
        if START not in self.transitions or not self.transitions[START]:
            raise GenerationError(f"no transitions out of {START}")
        for src, arcs in self.transitions.items():
            if src != START and src not in self.states:
                raise GenerationError(f"transition from unknown state {src!r}")
            for intent, dst in arcs.items():
                if intent not in self.intents:
                    raise GenerationError(f"transition uses unknown intent {intent!r}")
                if dst not in self.states:
                    raise GenerationError(f"transition to unknown state {dst!r}")
        # every state reachable from START
        seen = {START}
        frontier = [START]
        while frontier:
            src = frontier.pop()
            for dst in self.transitions.get(src, {}).values():
                if dst not in seen:
                    seen.add(dst)
                    frontier.append(dst)
        missing = [s for s in self.states if s not in seen]
        if missing:
            raise GenerationError(f"states unreachable from {START}: {missing}")

    @property
    def edge_set(self) -> set[tuple[str, str]]:
        """All (source, destination) pairs in the transition table."""
        return {(src, dst) for src, arcs in self.transitions.items()
                for dst in arcs.values()}

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "templates": {k: list(v) for k, v in self.templates.items()},
            "intents": {k: list(v) for k, v in self.intents.items()},
            "transitions": {s: dict(a) for s, a in self.transitions.items()},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "OracleMachine":
        machine = cls(
            states=tuple(raw["states"]),
            templates={k: list(v) for k, v in raw["templates"].items()},
            intents={k: list(v) for k, v in raw["intents"].items()},
            transitions={s: dict(a) for s, a in raw["transitions"].items()},
        )
        machine.validate()
        return machine

    def save(self, path: str | Path):
        Path(path).write_text(
            yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "OracleMachine":
        return cls.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")))


def default_machine() -> OracleMachine:
    """The 4-state restaurant-booking machine used by the oracle experiments.

    Flow: greet -> request -> inform (self-loop on cuisine changes) -> thank.
    One response template per state keeps the attainable BLEU ceiling at 100.
    """
    return OracleMachine(
        states=("greet", "request", "inform", "thank"),
        templates={
            "greet": ["hello ! how can i help you today ?"],
            "request": ["sure , which cuisine would you like ?"],
            "inform": ["i found a nice cuisine_0 restaurant downtown , "
                       "shall i book a table ?"],
            "thank": ["you are welcome , enjoy your meal !"],
        },
        intents={
            "open": [
                "hello",
                "hi there",
                "good morning",
                "hey , anyone there ?",
            ],
            "ask_restaurant": [
                "i need a restaurant reservation",
                "can you find me a place to eat",
                "book me a table somewhere",
                "i am looking for a restaurant",
            ],
            "give_cuisine": [
                "i would like <new:cuisine> food",
                "let's go with <new:cuisine>",
                "<new:cuisine> sounds great",
                "maybe some <new:cuisine> cooking",
            ],
            "change_cuisine": [
                "actually , make it <new:cuisine> instead",
                "hmm , i prefer <new:cuisine> now",
                "wait , switch that to <new:cuisine>",
            ],
            "say_thanks": [
                "thank you so much",
                "thanks , that will do just fine",
                "great , thank you !",
                "perfect , thanks a lot",
            ],
        },
        transitions={
            START: {"open": "greet"},
            "greet": {"ask_restaurant": "request"},
            "request": {"give_cuisine": "inform"},
            "inform": {"change_cuisine": "inform", "say_thanks": "thank"},
        },
    )


class _SlotFiller:
    """Per-dialog slot index bookkeeping for <new:type>/<same:type> tokens."""

    def __init__(self):
        self.next_index: Counter[str] = Counter()

    def fill(self, template: str) -> str:
        out = []
        for tok in template.split():
            m = _SLOT.match(tok)
            if m is None:
                out.append(tok)
                continue
            mode, etype = m.groups()
            if mode == "new" or self.next_index[etype] == 0:
                idx = self.next_index[etype]
                self.next_index[etype] += 1
            else:
                idx = self.next_index[etype] - 1
            out.append(f"{etype}_{idx}")
        return " ".join(out)


def _sample_dialog(machine: OracleMachine, max_turns: int,
                   rng: np.random.Generator) -> tuple[list[tuple[str, str]], list[str]]:
    filler = _SlotFiller()
    pairs: list[tuple[str, str]] = []
    labels: list[str] = []
    state = START
    for _ in range(max_turns):
        arcs = machine.transitions.get(state)
        if not arcs:
            break
        intent = sorted(arcs)[rng.integers(len(arcs))]
        state = arcs[intent]
        paraphrases = machine.intents[intent]
        user = filler.fill(paraphrases[rng.integers(len(paraphrases))])
        forms = machine.templates[state]
        agent = filler.fill(forms[rng.integers(len(forms))])
        pairs.append((user, agent))
        labels.append(state)
    return pairs, labels


def generate_corpus(machine: OracleMachine, n_dialogs: int = 500,
                    max_turns: int = 5, seed: int = 0,
                    ) -> tuple[CorpusSplit, dict[str, tuple[str, ...]]]:
    """Sample dialogs by random intent walks; 80/10/10 split.

    Returns the corpus plus gold per-turn state labels keyed by dialog id.
    Deterministic for a fixed seed.
    """
    machine.validate()
    if n_dialogs < 1:
        raise GenerationError(f"n_dialogs must be positive, got {n_dialogs}")
    if max_turns < 1:
        raise GenerationError(f"max_turns must be positive, got {max_turns}")
    rng = np.random.default_rng(seed)
    dialogs: list[Dialog] = []
    gold: dict[str, tuple[str, ...]] = {}
    for i in range(n_dialogs):
        pairs, labels = _sample_dialog(machine, max_turns, rng)
        if not pairs:
            raise GenerationError(f"empty walk from {START}; machine misconfigured")
        d = make_dialog(f"synth{i:05d}", pairs)
        dialogs.append(d)
        gold[d.id] = tuple(labels)
    n_train = int(n_dialogs * 0.8)
    n_dev = int(n_dialogs * 0.1)
    split = CorpusSplit(
        train=dialogs[:n_train],
        dev=dialogs[n_train : n_train + n_dev],
        test=dialogs[n_train + n_dev :],
    )
    return split, gold


def save_labels(gold: dict[str, tuple[str, ...]], path: str | Path):
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for did in sorted(gold):
            fh.write(json.dumps({"id": did, "states": list(gold[did])}) + "\n")


def load_labels(path: str | Path) -> dict[str, tuple[str, ...]]:
    import json

    gold = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                gold[rec["id"]] = tuple(rec["states"])
    return gold


def state_recovery(learned_labels: Sequence, gold_labels: Sequence) -> float:
    """Cluster purity of learned states against gold states, in [0, 1].

    purity = (1/T) * sum over learned clusters of the largest overlap with any
    single gold state.  Invariant under permutation of learned ids.
    """
    if len(learned_labels) != len(gold_labels):
        raise ValueError(
            f"label sequences differ in length: {len(learned_labels)} "
            f"vs {len(gold_labels)}")
    if not learned_labels:
        raise ValueError("empty label sequences")
    overlap: Counter[tuple] = Counter(zip(learned_labels, gold_labels))
    clusters: dict = {}
    for (lab, g), c in overlap.items():
        clusters.setdefault(lab, Counter())[g] = c
    total = sum(max(by_gold.values()) for by_gold in clusters.values())
    return total / len(learned_labels)


def align_states(learned_labels: Sequence, gold_labels: Sequence) -> dict:
    """Map each learned state to its majority gold state (ties: first gold in
    sorted order).  Used to project mined flow graphs onto oracle states."""
    if len(learned_labels) != len(gold_labels):
        raise ValueError("label sequences differ in length")
    overlap: Counter[tuple] = Counter(zip(learned_labels, gold_labels))
    clusters: dict = {}
    for (lab, g), c in overlap.items():
        clusters.setdefault(lab, Counter())[g] = c
    return {lab: min(by_gold, key=lambda g: (-by_gold[g], str(g)))
            for lab, by_gold in clusters.items()}
