"""Model distributions: normalization, agreement between the batched
teacher-forced scorer and the stepwise numpy decoder, input validation, and
checkpoint round-trips."""

import numpy as np
import pytest

import lstn.diffcore as dc
from lstn.corpus import BOS, EOS
from lstn.model import START_STATE, LstnModel, ModelConfig, load_model


@pytest.fixture
def model():
    return LstnModel(ModelConfig(vocab_size=12, K=3, embedding_dim=5,
                                 hidden_dim=4), seed=0)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=12, K=0)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=3, K=2)
    ModelConfig(vocab_size=12, K=1)  # K=1 allowed for capacity sweeps


def test_parameter_shapes(model):
    arrays = model.store.arrays
    assert arrays["emb"].shape == (12, 5)
    assert arrays["trans.W"].shape == (3, 8)
    assert arrays["v"].shape == (4, 4)   # K+1 rows, START last
    assert arrays["r"].shape == (3, 4)
    assert arrays["out.W"].shape == (12, 4)


def test_shared_state_embeddings_drop_r():
    shared = LstnModel(ModelConfig(vocab_size=12, K=3, embedding_dim=5,
                                   hidden_dim=4, shared_state_embeddings=True))
    assert "r" not in shared.store
    h, _ = shared.decoder_start([0, 2])
    np.testing.assert_array_equal(h, shared.store.arrays["v"][[0, 2]])


def test_transition_matrix_rows_normalize(model):
    mat = model.transition_matrix([4, 5, 6]).value
    assert mat.shape == (4, 3)  # K+1 predecessors x K successors
    np.testing.assert_allclose(np.exp(mat).sum(axis=1), 1.0, atol=1e-12)


def test_transition_logprobs_start_uses_extra_row(model):
    x = [4, 5]
    mat = model.transition_matrix(x).value
    np.testing.assert_allclose(model.transition_logprobs(START_STATE, x),
                               mat[3], atol=1e-15)
    np.testing.assert_allclose(model.transition_logprobs(1, x), mat[1],
                               atol=1e-15)


def test_transition_depends_on_utterance_and_predecessor(model):
    a = model.transition_logprobs(0, [4, 5])
    b = model.transition_logprobs(0, [6, 7])
    c = model.transition_logprobs(2, [4, 5])
    assert not np.allclose(a, b)
    assert not np.allclose(a, c)


def test_emission_scores_match_single_state_scorer(model):
    y = [5, 6, 7, EOS]
    batch = model.emission_scores(y).value
    singles = [model.emission_logprob(y, z) for z in range(model.K)]
    np.testing.assert_allclose(batch, singles, atol=1e-12)


def test_emission_normalizes_over_next_token(model):
    logp = model.emission_next_token([5, 6], z=1)
    assert logp.shape == (12,)
    assert np.exp(logp).sum() == pytest.approx(1.0, abs=1e-12)


def test_stepwise_decoder_reproduces_teacher_forced_score(model):
    """Summing per-step token log-probs from the numpy decoder must equal the
    batched autodiff scorer bit-for-bit."""
    y = np.array([5, 9, 4, EOS])
    for z in range(model.K):
        h, c = model.decoder_start([z])
        total = 0.0
        for prev, tok in zip(np.concatenate(([BOS], y[:-1])), y):
            h, c, logp = model.decoder_step(h, c, [prev])
            total += logp[0, tok]
        assert total == pytest.approx(model.emission_logprob(y, z), abs=1e-12)


def test_emission_requires_eos(model):
    with pytest.raises(ValueError):
        model.emission_scores([5, 6])


def test_id_range_checks(model):
    with pytest.raises(IndexError):
        model.encode_utterance([4, 99])
    with pytest.raises(IndexError):
        model.emission_logprob([5, EOS], z=7)
    with pytest.raises(IndexError):
        model.transition_logprobs(-2, [4])
    with pytest.raises(ValueError):
        model.encode_utterance([])


def test_joint_logprob_sums_factors(model):
    class Dlg:
        users = ([4, 5], [6])
        agents = ((5, EOS), (7, 8, EOS))
        n_turns = 2

    d = Dlg()
    expected = (model.transition_logprobs(START_STATE, d.users[0])[1]
                + model.emission_logprob(d.agents[0], 1)
                + model.transition_logprobs(1, d.users[1])[0]
                + model.emission_logprob(d.agents[1], 0))
    assert model.joint_logprob(d, [1, 0]) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(ValueError):
        model.joint_logprob(d, [1])


def test_gradients_flow_through_both_sides(model):
    model.store.zero_grads()
    obj = dc.sum_all(model.transition_matrix([4, 5]))
    obj.backward()
    assert np.any(model.store.grads["trans.W"] != 0)
    assert np.any(model.store.grads["v"] != 0)
    assert np.any(model.store.grads["enc.Wx"] != 0)
    model.store.zero_grads()
    obj = dc.sum_all(model.emission_scores([5, EOS]))
    obj.backward()
    assert np.any(model.store.grads["r"] != 0)
    assert np.any(model.store.grads["out.W"] != 0)
    assert np.any(model.store.grads["dec.Wh"] != 0)


def test_save_load_roundtrip(tmp_path, model):
    path = tmp_path / "m.npz"
    model.save(path, extra_meta={"dataset": "unit"})
    loaded, meta = LstnModel.load(path)
    assert meta["dataset"] == "unit"
    assert loaded.config == model.config
    x, y = [4, 5, 6], [7, EOS]
    np.testing.assert_array_equal(loaded.transition_logprobs(0, x),
                                  model.transition_logprobs(0, x))
    assert loaded.emission_logprob(y, 2) == model.emission_logprob(y, 2)


def test_load_model_dispatches_on_kind(tmp_path, model):
    from lstn.baseline import SplitModel

    path = tmp_path / "m.npz"
    model.save(path)
    plain, _ = load_model(path)
    assert type(plain) is LstnModel

    split_model = SplitModel(ModelConfig(vocab_size=12, K=3, embedding_dim=5,
                                         hidden_dim=4), seed=0)
    split_path = tmp_path / "s.npz"
    split_model.save(split_path)
    again, meta = load_model(split_path)
    assert type(again) is SplitModel
    assert meta["kind"] == "split"


def test_config_hash_distinguishes_configs(model):
    other = LstnModel(ModelConfig(vocab_size=12, K=4, embedding_dim=5,
                                  hidden_dim=4))
    assert model.config_hash() != other.config_hash()
    assert model.config_hash() == LstnModel(model.config).config_hash()


def test_seed_controls_init():
    cfg = ModelConfig(vocab_size=12, K=3, embedding_dim=5, hidden_dim=4)
    a, b = LstnModel(cfg, seed=1), LstnModel(cfg, seed=1)
    c = LstnModel(cfg, seed=2)
    np.testing.assert_array_equal(a.store.arrays["emb"], b.store.arrays["emb"])
    assert not np.array_equal(a.store.arrays["emb"], c.store.arrays["emb"])
