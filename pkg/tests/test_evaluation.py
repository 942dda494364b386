"""Response quality scoring: the BLEU variant against an independently
written n-gram oracle plus frozen hand values, recoverability / end-to-end
scoring on rigged models, report round-trips, and the K sweep."""

import math
from collections import Counter

import numpy as np
import pytest

import lstn.diffcore as dc
from lstn.corpus import EOS, EncodedDialog
from lstn.evaluation import (BLEU_VARIANT, EvalReport, bleu, end_to_end_bleu,
                             end_to_end_details, evaluate, k_sweep,
                             recoverability, recoverability_details,
                             write_report, write_sweep)
from lstn.inference import CacheEntry, ResponseCache
from lstn.synth import default_machine, generate_corpus


def oracle_bleu(hyp, refs):
    """Same scoring convention, written independently: explicit per-order
    loops, no Counter arithmetic shared with the implementation."""
    refs = [list(r) for r in refs if r]
    hyp = list(hyp)
    if not hyp:
        return 0.0
    logs = []
    for n in (1, 2, 3, 4):
        grams = [tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1)]
        clipped = 0
        for gram in set(grams):
            best = 0
            for ref in refs:
                c = sum(1 for j in range(len(ref) - n + 1)
                        if tuple(ref[j:j + n]) == gram)
                best = max(best, c)
            clipped += min(grams.count(gram), best)
        if n == 1:
            if clipped == 0:
                return 0.0
            logs.append(math.log(clipped / len(grams)))
        else:
            logs.append(math.log((clipped + 1) / (len(grams) + 1)))
    diffs = sorted((abs(len(r) - len(hyp)), len(r)) for r in refs)
    r_len = diffs[0][1]
    bp = 1.0 if len(hyp) > r_len else math.exp(1 - r_len / len(hyp))
    return 100.0 * bp * math.exp(sum(logs) / 4)


# ---------------------------------------------------------------------------
# frozen hand values


def test_bleu_clipping_hand_value():
    """clipped unigram precision 1/3; higher orders add-one smoothed."""
    score = bleu("the the the".split(), ["the cat".split()])
    p = (1 / 3) * (1 / 3) * (1 / 2) * 1.0
    assert score == pytest.approx(100 * p ** 0.25, abs=1e-9)
    assert score == pytest.approx(48.55, abs=0.005)


def test_bleu_identity_is_100():
    assert bleu(list("abcde"), [list("abcde")]) == pytest.approx(100.0)
    assert bleu(["hi"], [["hi"]]) == pytest.approx(100.0)


def test_bleu_no_overlap_and_empty_are_zero():
    assert bleu(list("abc"), [list("xyz")]) == 0.0
    assert bleu([], [list("abc")]) == 0.0


def test_bleu_requires_a_reference():
    with pytest.raises(ValueError):
        bleu(list("abc"), [])
    with pytest.raises(ValueError):
        bleu(list("abc"), [[]])


def test_bleu_brevity_penalty_direction():
    ref = list("abcdefgh")
    short = bleu(list("abcd"), [ref])
    full = bleu(ref, [ref])
    assert short < full
    # closest-length tie (|2-3| == |4-3|) resolves to the shorter reference,
    # so a length-3 hypothesis takes no brevity penalty at all
    with_tie = bleu(list("abz"), [list("ab"), list("abzz")])
    assert with_tie == pytest.approx(oracle_bleu(list("abz"),
                                                 [list("ab"), list("abzz")]))


def test_bleu_multi_reference_clipping_uses_max():
    hyp = "a a b".split()
    refs = ["a a".split(), "b b".split()]
    assert bleu(hyp, refs) == pytest.approx(oracle_bleu(hyp, refs), abs=1e-9)


def test_bleu_matches_independent_oracle_on_random_pairs():
    rng = np.random.default_rng(0)
    vocab = list("abcdef")
    for _ in range(300):
        hyp = [vocab[i] for i in rng.integers(0, 6, size=rng.integers(1, 9))]
        refs = [[vocab[i] for i in rng.integers(0, 6, size=rng.integers(1, 9))]
                for _ in range(rng.integers(1, 3))]
        assert bleu(hyp, refs) == pytest.approx(oracle_bleu(hyp, refs),
                                                abs=1e-9), (hyp, refs)


# ---------------------------------------------------------------------------
# corpus-level metrics on rigged models


class RiggedModel:
    """Hand-set distributions: emission argmax and tracked state both equal
    the first token of the turn (mod K)."""

    K = 2

    def emission_scores(self, y_ids):
        scores = np.full(2, -10.0)
        scores[y_ids[0] % 2] = -1.0
        return dc.constant(scores)

    def transition_matrix(self, x_ids):
        mat = np.full((3, 2), np.log(0.1))
        mat[:, x_ids[0] % 2] = np.log(0.9)
        return dc.constant(mat)


def _rigged_cache():
    return ResponseCache(beam_size=1, max_len=5, length_normalize=False,
                         entries={0: [CacheEntry((10, 11), -0.5)],
                                  1: [CacheEntry((20, 21, 22), -0.7)]})


def test_recoverability_100_when_cache_matches_gold():
    model, cache = RiggedModel(), _rigged_cache()
    d = EncodedDialog("d", users=((0,), (1,)),
                      agents=((10, 11, EOS), (21, 20, 22, EOS)))
    # turn 1: state 0 -> (10, 11) vs gold (10, 11): BLEU 100
    # turn 2: state 1 -> (20, 21, 22) vs gold permuted: < 100
    score, per_dialog = recoverability_details([d], model, cache)
    t2 = bleu((20, 21, 22), [(21, 20, 22)])
    assert score == pytest.approx((100.0 + t2) / 2, abs=1e-9)
    assert per_dialog[0]["id"] == "d"
    assert recoverability([d], model, cache) == pytest.approx(score)


def test_end_to_end_follows_tracked_state():
    model, cache = RiggedModel(), _rigged_cache()
    good = EncodedDialog("good", users=((0,), (1,)),
                         agents=((10, 11, EOS), (20, 21, 22, EOS)))
    assert end_to_end_bleu([good], model, cache) == pytest.approx(100.0)
    # user tokens route to state 1, gold responses belong to state 0
    confused = EncodedDialog("bad", users=((1,), (1,)),
                             agents=((10, 11, EOS), (10, 11, EOS)))
    assert end_to_end_bleu([confused], model, cache) == 0.0


def test_recoverability_state_maximizes_gold_likelihood():
    """The recoverability path must pick the state that best explains the
    gold response, regardless of what tracking would have said."""
    model, cache = RiggedModel(), _rigged_cache()
    # user tokens say state 1, but the gold response is state 0's cache top
    d = EncodedDialog("d", users=((1,),), agents=((10, 11, EOS),))
    rec, _ = recoverability_details([d], model, cache)
    assert rec == pytest.approx(100.0)  # emission argmax -> state 0
    assert end_to_end_bleu([d], model, cache) == 0.0  # tracking -> state 1


# ---------------------------------------------------------------------------
# reports


def test_eval_report_roundtrip_and_range():
    rep = EvalReport(dataset="unit", K=4, bleu=77.123456, recoverability=88.0,
                     per_dialog=[{"id": "d", "score": 77.123456}],
                     config_hash="abc")
    line = rep.to_json_line()
    again = EvalReport.from_json_line(line)
    assert again == rep
    assert again.bleu_variant == BLEU_VARIANT
    with pytest.raises(ValueError):
        EvalReport(dataset="unit", K=4, bleu=101.0, recoverability=0.0)
    with pytest.raises(ValueError):
        EvalReport(dataset="unit", K=4, bleu=0.0, recoverability=-0.1)


def test_write_report_and_table(tmp_path):
    rep = EvalReport(dataset="unit", K=4, bleu=50.0, recoverability=60.0)
    jp, tp = tmp_path / "r.json", tmp_path / "r.txt"
    write_report(rep, jp, tp)
    assert EvalReport.from_json_line(jp.read_text().strip()) == rep
    table = tp.read_text()
    assert "end-to-end BLEU 50.00" in table
    assert "recoverability  60.00" in table
    # identical report -> identical bytes
    jp2 = tmp_path / "r2.json"
    write_report(rep, jp2)
    assert jp.read_bytes() == jp2.read_bytes()


def test_evaluate_builds_consistent_report():
    model, cache = RiggedModel(), _rigged_cache()
    d = EncodedDialog("d", users=((0,),), agents=((10, 11, EOS),))
    rep = evaluate([d], model, cache, dataset="rigged", config_hash="h")
    assert rep.K == 2 and rep.dataset == "rigged"
    assert rep.bleu == pytest.approx(100.0)
    assert rep.recoverability == pytest.approx(100.0)
    assert len(rep.per_dialog) == 1


# ---------------------------------------------------------------------------
# K sweep


def test_k_sweep_rows_and_error_isolation(tmp_path):
    from lstn.em import TrainConfig

    split, _ = generate_corpus(default_machine(), n_dialogs=20, max_turns=3,
                               seed=0)
    config = TrainConfig(K=8, embedding_dim=8, hidden_dim=8, epochs=1,
                         batch_size=16, seed=0, allow_off_grid=True)
    rows = k_sweep(split, config, k_values=[2, 0], beam_size=2)
    assert [r["K"] for r in rows] == [0, 2]
    assert "error" in rows[0]  # K=0 is invalid and must not stop the sweep
    assert "bleu" in rows[1] and 0.0 <= rows[1]["bleu"] <= 100.0

    path = tmp_path / "sweep.tsv"
    write_sweep(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# K=0 failed:")
    assert lines[1].split("\t")[0] == "2"

    with pytest.raises(ValueError):
        k_sweep(split, config, k_values=[])
