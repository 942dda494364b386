"""Pipelined two-phase baseline: per-turn Bayes posterior against a hand
oracle, hard assignment, phase-filtered updates, and interface parity with
the joint model."""

import numpy as np
import pytest

import lstn.diffcore as dc
from lstn.baseline import (PHASE1_PREFIXES, PHASE2_PREFIXES, SplitModel,
                           _contexts, hard_assign, phase1_loglik,
                           phase1_objective, phase1_posterior,
                           phase2_objective, train_baseline)
from lstn.corpus import EOS, EncodedDialog
from lstn.em import TrainConfig
from lstn.inference import build_response_cache, track_state
from lstn.model import ModelConfig
from lstn.synth import default_machine, generate_corpus


@pytest.fixture
def model():
    return SplitModel(ModelConfig(vocab_size=10, K=3, embedding_dim=5,
                                  hidden_dim=4), seed=0)


def _dialog():
    return EncodedDialog("d", users=((4, 5), (6,)),
                         agents=((7, EOS), (8, 9, EOS)))


def test_split_model_rejects_shared_embeddings():
    with pytest.raises(ValueError):
        SplitModel(ModelConfig(vocab_size=10, K=3, embedding_dim=5,
                               hidden_dim=4, shared_state_embeddings=True))


def test_phase_parameter_partition_is_disjoint_and_complete(model):
    from lstn.baseline import _names_with_prefix

    p1 = set(_names_with_prefix(model.store, PHASE1_PREFIXES))
    p2 = set(_names_with_prefix(model.store, PHASE2_PREFIXES))
    assert not p1 & p2
    assert p1 | p2 == set(model.store.names())


def test_contexts_concatenate_user_history():
    ctxs = _contexts(_dialog())
    np.testing.assert_array_equal(ctxs[0], [4, 5])
    np.testing.assert_array_equal(ctxs[1], [4, 5, 6])


def test_contexts_can_include_agent_history(model):
    ctxs = _contexts(_dialog(), include_agent=True)
    np.testing.assert_array_equal(ctxs[0], [4, 5])          # nothing said yet
    np.testing.assert_array_equal(ctxs[1], [4, 5, 7, EOS, 6])
    # the wider context changes the posterior from the second turn on
    narrow = phase1_posterior(_dialog(), model)
    wide = phase1_posterior(_dialog(), model, include_agent=True)
    np.testing.assert_allclose(narrow[0], wide[0], atol=1e-12)
    assert not np.allclose(narrow[1], wide[1])


def test_context_logprobs_normalize(model):
    lp = model.context_logprobs([4, 5, 6]).value
    assert lp.shape == (3,)
    assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-12)


def test_phase1_posterior_is_bayes_rule(model):
    """q(z) must equal prior*likelihood renormalized, computed by hand."""
    d = _dialog()
    qs = phase1_posterior(d, model)
    assert len(qs) == 2
    for ctx, y, log_q in zip(_contexts(d), d.agents, qs):
        prior = model.context_logprobs(ctx).value
        like = model.emission_scores(y).value
        joint = np.exp(prior + like)
        np.testing.assert_allclose(np.exp(log_q), joint / joint.sum(),
                                   atol=1e-12)
        assert np.exp(log_q).sum() == pytest.approx(1.0, abs=1e-9)


def test_phase1_objective_matches_hand_expectation(model):
    d = _dialog()
    qs = phase1_posterior(d, model)
    got = float(phase1_objective(d, model, qs).value)
    want = 0.0
    for ctx, y, log_q in zip(_contexts(d), d.agents, qs):
        scores = (model.context_logprobs(ctx).value
                  + model.emission_scores(y).value)
        want += float(np.exp(log_q) @ scores)
    assert got == pytest.approx(want, abs=1e-12)


def test_phase1_elbo_identity(model):
    """objective + entropy(q) equals the turn-marginalized log-likelihood."""
    d = _dialog()
    qs = phase1_posterior(d, model)
    h = -sum(float(np.sum(np.exp(lq) * lq)) for lq in qs)
    f = float(phase1_objective(d, model, qs).value)
    assert f + h == pytest.approx(phase1_loglik(d, model), abs=1e-9)


def test_phase1_gradient_matches_finite_differences(model):
    d = _dialog()
    qs = phase1_posterior(d, model)
    err = dc.grad_check(lambda: phase1_objective(d, model, qs), model.store,
                        rng=np.random.default_rng(0), max_coords=4)
    assert err < 1e-3


def test_hard_assign_is_emission_argmax(model):
    d = _dialog()
    labels = hard_assign([d], model)
    for y, z in zip(d.agents, labels["d"]):
        assert z == int(np.argmax(model.emission_scores(y).value))


def test_phase2_objective_sums_transition_logprobs(model):
    d = _dialog()
    labels = [2, 0]
    got = float(phase2_objective(d, model, labels).value)
    want = (model.transition_logprobs(-1, d.users[0])[2]
            + model.transition_logprobs(2, d.users[1])[0])
    assert got == pytest.approx(float(want), abs=1e-12)
    with pytest.raises(ValueError):
        phase2_objective(d, model, [1])


def test_phase2_gradient_stays_in_phase2_params(model):
    d = _dialog()
    model.store.zero_grads()
    dc.scale(phase2_objective(d, model, [0, 1]), -1.0).backward()
    touched = {n for n in model.store.names()
               if np.any(model.store.grads[n] != 0)}
    from lstn.baseline import _names_with_prefix

    assert touched <= set(_names_with_prefix(model.store, PHASE2_PREFIXES))
    assert "trans.W" in touched and "v" in touched


def test_split_model_supports_standard_inference(model):
    cache = build_response_cache(model, beam_size=3, max_len=4)
    assert set(cache.entries) == {0, 1, 2}
    m = track_state(None, [4, 5], model)
    m.check()
    m2 = track_state(m, [6], model)
    m2.check()


def test_split_checkpoint_roundtrip(tmp_path, model):
    from lstn.model import load_model

    path = tmp_path / "split.npz"
    model.save(path, extra_meta={"dataset": "unit"})
    loaded, meta = load_model(path)
    assert isinstance(loaded, SplitModel)
    assert meta["kind"] == "split" and meta["dataset"] == "unit"
    np.testing.assert_array_equal(loaded.store.arrays["emb2"],
                                  model.store.arrays["emb2"])
    d = _dialog()
    np.testing.assert_allclose(phase1_loglik(d, loaded),
                               phase1_loglik(d, model), atol=1e-12)


@pytest.fixture(scope="module")
def baseline_result():
    split, _ = generate_corpus(default_machine(), n_dialogs=30, max_turns=4,
                               seed=0)
    config = TrainConfig(K=8, embedding_dim=16, hidden_dim=12, epochs=2,
                         batch_size=16, seed=0, allow_off_grid=True)
    return train_baseline(split, config), split, config


def test_train_baseline_end_to_end(baseline_result):
    result, split, config = baseline_result
    assert not result.diverged
    assert result.best_dev_ppl < result.phase1_log[0]["dev_ppl"]
    assert {rec["phase"] for rec in result.phase1_log} == {1}
    assert {rec["phase"] for rec in result.phase2_log} == {2}
    assert len(result.phase1_log) == config.epochs + 1
    assert len(result.phase2_log) == config.epochs + 1
    # hard labels cover every training dialog, one label per turn
    by_id = {d.id: d for d in split.train}
    assert set(result.train_labels) == set(by_id)
    for did, labels in result.train_labels.items():
        assert len(labels) == by_id[did].n_turns
        assert all(0 <= z < config.K for z in labels)


def test_train_baseline_is_deterministic(baseline_result):
    result, split, config = baseline_result
    again = train_baseline(split, config)
    strip = lambda recs: [{k: v for k, v in r.items() if k != "wall_ms"}
                          for r in recs]
    assert strip(again.phase1_log) == strip(result.phase1_log)
    assert strip(again.phase2_log) == strip(result.phase2_log)
    for name in result.model.store.names():
        np.testing.assert_array_equal(again.model.store.arrays[name],
                                      result.model.store.arrays[name])
