"""BLEU, recoverability, end-to-end response evaluation, and the K-sweep.

BLEU variant: sentence-level BLEU-4 with brevity penalty; the unigram
precision is unsmoothed (and gates the score: no unigram match means 0),
higher orders use add-one smoothing so short responses do not zero out.  The
variant tag is recorded in every report.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .corpus import CorpusSplit, EncodedDialog, encode_dialog
from .inference import ResponseCache, build_response_cache, respond, track_state

BLEU_VARIANT = "sentence-bleu4/add1-orders2-4/bp"


def _ngram_counts(seq, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(hypothesis, references) -> float:
    """Sentence BLEU-4 in [0, 100]; see the module docstring for smoothing."""
    refs = [list(r) for r in references if len(r) > 0]
    if not refs:
        raise ValueError("bleu needs at least one non-empty reference")
    hyp = list(hypothesis)
    c = len(hyp)
    if c == 0:
        return 0.0
    log_p_sum = 0.0
    for n in range(1, 5):
        hyp_counts = _ngram_counts(hyp, n)
        total = max(c - n + 1, 0)
        max_ref = Counter()
        for r in refs:
            for gram, cnt in _ngram_counts(r, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        clipped = sum(min(cnt, max_ref[g]) for g, cnt in hyp_counts.items())
        if n == 1:
            if clipped == 0:
                return 0.0
            p = clipped / total
        else:
            p = (clipped + 1.0) / (total + 1.0)
        log_p_sum += np.log(p)
    # brevity penalty against the closest reference length (ties: shorter)
    r_len = min((abs(len(r) - c), len(r)) for r in refs)[1]
    bp = 1.0 if c > r_len else float(np.exp(1.0 - r_len / c))
    return float(100.0 * bp * np.exp(log_p_sum / 4.0))


# ---------------------------------------------------------------------------
# corpus-level scores


def recoverability_details(test_dialogs: list[EncodedDialog], model,
                           cache: ResponseCache) -> tuple[float, list[dict]]:
    """Mean BLEU of the best-explaining state's top response against each gold
    response: the attainable ceiling for this K."""
    per_dialog = []
    all_scores = []
    with dc.no_grad():
        for d in test_dialogs:
            scores = []
            for y in d.agents:
                z = int(np.argmax(model.emission_scores(y).value))
                top = cache.top(z).tokens
                scores.append(bleu(top, [y[:-1]]))
            per_dialog.append({"id": d.id, "score": round(float(np.mean(scores)), 6)})
            all_scores.extend(scores)
    return float(np.mean(all_scores)), per_dialog


def recoverability(test_dialogs: list[EncodedDialog], model,
                   cache: ResponseCache) -> float:
    return recoverability_details(test_dialogs, model, cache)[0]


def end_to_end_details(test_dialogs: list[EncodedDialog], model,
                       cache: ResponseCache) -> tuple[float, list[dict]]:
    """Track the state from the gold user utterances turn by turn, answer with
    the cached rank-1 response, and score against the gold response."""
    per_dialog = []
    all_scores = []
    for d in test_dialogs:
        marginal = None
        scores = []
        for x, y in zip(d.users, d.agents):
            marginal = track_state(marginal, x, model)
            _, response = respond(marginal, cache)
            scores.append(bleu(response, [y[:-1]]))
        per_dialog.append({"id": d.id, "score": round(float(np.mean(scores)), 6)})
        all_scores.extend(scores)
    return float(np.mean(all_scores)), per_dialog


def end_to_end_bleu(test_dialogs: list[EncodedDialog], model,
                    cache: ResponseCache) -> float:
    return end_to_end_details(test_dialogs, model, cache)[0]


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    dataset: str
    K: int
    bleu: float
    recoverability: float
    per_dialog: list[dict] = field(default_factory=list)
    config_hash: str = ""
    bleu_variant: str = BLEU_VARIANT

    def __post_init__(self):
        for name in ("bleu", "recoverability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} = {v} outside [0, 100]")

    def to_json_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def to_table(self) -> str:
        lines = [
            f"dataset         {self.dataset}",
            f"K               {self.K}",
            f"end-to-end BLEU {self.bleu:.2f}",
            f"recoverability  {self.recoverability:.2f}",
            f"bleu variant    {self.bleu_variant}",
            f"config hash     {self.config_hash}",
            f"dialogs scored  {len(self.per_dialog)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_json_line(cls, line: str) -> "EvalReport":
        return cls(**json.loads(line))


def evaluate(test_dialogs: list[EncodedDialog], model, cache: ResponseCache,
             dataset: str, config_hash: str = "") -> EvalReport:
    e2e, per_dialog = end_to_end_details(test_dialogs, model, cache)
    rec, _ = recoverability_details(test_dialogs, model, cache)
    return EvalReport(dataset=dataset, K=model.K, bleu=round(e2e, 6),
                      recoverability=round(rec, 6), per_dialog=per_dialog,
                      config_hash=config_hash)


def write_report(report: EvalReport, jsonl_path, table_path=None):
    Path(jsonl_path).write_text(report.to_json_line() + "\n", encoding="utf-8")
    if table_path is not None:
        Path(table_path).write_text(report.to_table(), encoding="utf-8")


# ---------------------------------------------------------------------------
# K sweep


def k_sweep(corpus: CorpusSplit, config, k_values, beam_size: int = 10) -> list[dict]:
    """Train and evaluate once per K with an otherwise identical config.

    Rows come back sorted by K; a failed run contributes an error row instead
    of stopping the sweep.
    """
    from .em import train

    if not k_values:
        raise ValueError("k_values must be non-empty")
    rows = []
    for K in sorted(k_values):
        cfg = replace(config, K=K, allow_off_grid=True)
        try:
            result = train(corpus, cfg)
            test = corpus.test if corpus.test else corpus.dev
            test_enc = [encode_dialog(d, result.vocab) for d in test]
            cache = build_response_cache(result.model, beam_size=beam_size)
            score = end_to_end_bleu(test_enc, result.model, cache)
            rows.append({"K": K, "bleu": round(score, 6)})
        except Exception as exc:  # keep sweeping; report the failure in-row
            rows.append({"K": K, "error": f"{type(exc).__name__}: {exc}"})
    return rows


def write_sweep(rows: list[dict], path):
    """Two-column plot data (K, BLEU); error rows are commented out."""
    lines = []
    for row in rows:
        if "bleu" in row:
            lines.append(f"{row['K']}\t{row['bleu']}")
        else:
            lines.append(f"# K={row['K']} failed: {row['error']}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
