import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtn.errors import ConfigError, ShapeError
from mvtn.model import (
    ModelConfig,
    embed_sequence,
    encoder_stage_forward,
    forward,
    init_params,
    model_grad_check,
    predict_proba,
    sinusoidal_pe,
)
from mvtn.tensor import Tape, Tensor, backward, cross_entropy, grad_check, linear

from helpers import KINDS, oracle_weights, random_params, tiny_config
from oracles import vanilla_encoder_logits


def test_pe_position_zero():
    pe = sinusoidal_pe(4, 8).data
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)


def test_pe_first_entry_of_position_one():
    # sin(1) to 20 digits via mpmath
    assert sinusoidal_pe(2, 16).data[1, 0] == pytest.approx(0.84147098480789650665, abs=1e-15)


def test_pe_formula_and_range():
    T, D = 40, 512
    pe = sinusoidal_pe(T, D).data
    assert np.all(np.abs(pe) <= 1.0)
    pos, i = 17, 5
    assert pe[pos, 2 * i] == pytest.approx(np.sin(pos / 10000 ** (2 * i / D)), abs=1e-14)
    assert pe[pos, 2 * i + 1] == pytest.approx(np.cos(pos / 10000 ** (2 * i / D)), abs=1e-14)


def test_pe_odd_width():
    with pytest.raises(ConfigError):
        sinusoidal_pe(3, 7)


def test_embed_prepends_class_token():
    cfg = tiny_config(seq_len=2)
    p = init_params(cfg)
    out = embed_sequence(Tensor(np.ones((3, 2, 8))), p, cfg)
    assert out.shape == (3, 3, 16)


def test_embed_zero_path_is_pe():
    cfg = tiny_config()
    p = init_params(cfg)
    p.class_token.data[:] = 0
    out = embed_sequence(Tensor(np.zeros((2, 3, 8))), p, cfg).data
    np.testing.assert_array_equal(out[:, 0], 0.0)
    np.testing.assert_allclose(out[:, 1:], np.broadcast_to(sinusoidal_pe(3, 16).data, (2, 3, 16)), atol=0)


def test_embed_round_trip():
    cfg = tiny_config()
    p = random_params(cfg)
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 8)))
    out = embed_sequence(x, p, cfg).data
    recovered = out[:, 1:] - sinusoidal_pe(3, 16).data
    np.testing.assert_allclose(recovered, linear(x, p.embed_w, p.embed_b).data, atol=1e-12)
    np.testing.assert_array_equal(out[:, 0], np.broadcast_to(p.class_token.data, (2, 16)))


def test_embed_without_embeddings():
    cfg = tiny_config(use_embeddings=False, feature_dim=16)
    p = init_params(cfg)
    assert p.embed_w is None and p.class_token is None
    x = np.random.default_rng(2).normal(size=(2, 3, 16))
    out = embed_sequence(Tensor(x), p, cfg).data
    np.testing.assert_allclose(out, x + sinusoidal_pe(3, 16).data, atol=1e-15)


def test_embed_shape_errors():
    cfg = tiny_config()
    p = init_params(cfg)
    with pytest.raises(ShapeError):
        embed_sequence(Tensor(np.zeros((1, 3, 7))), p, cfg)
    with pytest.raises(ShapeError):
        embed_sequence(Tensor(np.zeros((1, 4, 8))), p, cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=32, stages=6, heads=8).validate()
    with pytest.raises(ConfigError):
        tiny_config(num_classes=1).validate()
    with pytest.raises(ConfigError):
        tiny_config(use_embeddings=False).validate()
    with pytest.raises(ConfigError):
        tiny_config(dropout=1.0).validate()
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"d_modle": 16})
    ModelConfig().validate()
    for kind in KINDS:
        ModelConfig(schedule_kind=kind).validate()


def test_stage_is_identity_with_zero_output_projections():
    cfg = tiny_config()
    p = random_params(cfg)
    stage = p.stages[0]
    for t in (stage.attn.w_o, stage.attn.b_o, stage.ffn_w2, stage.ffn_b2):
        t.data[:] = 0
    x = np.random.default_rng(3).normal(size=(2, 4, 16))
    np.testing.assert_array_equal(encoder_stage_forward(Tensor(x), stage).data, x)


@pytest.mark.parametrize("kind", KINDS)
def test_every_stage_preserves_shape(kind):
    cfg = tiny_config(schedule_kind=kind)
    p = random_params(cfg)
    x = Tensor(np.random.default_rng(4).normal(size=(2, 4, 16)))
    for stage in p.stages:
        y = encoder_stage_forward(x, stage)
        assert y.shape == x.shape
        x = y


def test_one_stage_gradcheck():
    cfg = tiny_config(stages=1)
    p = random_params(cfg)
    stage = p.stages[0]
    x0 = np.random.default_rng(5).normal(size=(2, 4, 16))
    w = Tensor(np.random.default_rng(6).normal(size=(2, 4, 16)))
    assert grad_check(lambda x: (encoder_stage_forward(x, stage) * w).sum(), Tensor(x0)) < 1e-4
    assert model_grad_check(cfg) < 1e-4


@pytest.mark.parametrize("kind", KINDS)
def test_forward_shape(kind):
    cfg = tiny_config(schedule_kind=kind)
    logits = forward(init_params(cfg), cfg, np.zeros((5, 3, 8)))
    assert logits.shape == (5, 3)


def test_forward_full_length_shape():
    cfg = ModelConfig(d_model=64, stages=6, heads=1, feature_dim=32, seq_len=40, num_classes=25)
    assert forward(init_params(cfg), cfg, np.zeros((2, 40, 32))).shape == (2, 25)


def test_forward_deterministic_in_eval_mode():
    cfg = tiny_config(dropout=0.1)
    x = np.random.default_rng(7).normal(size=(2, 3, 8))
    a = forward(init_params(cfg), cfg, x).data
    b = forward(init_params(cfg), cfg, x).data
    assert a.tobytes() == b.tobytes()


def test_dropout_active_only_in_training():
    cfg = tiny_config(dropout=0.5)
    p = init_params(cfg)
    x = np.random.default_rng(8).normal(size=(2, 3, 8))
    train_out = forward(p, cfg, x, training=True, rng=np.random.default_rng(0)).data
    assert not np.allclose(train_out, forward(p, cfg, x).data)
    with pytest.raises(ConfigError):
        forward(p, cfg, x, training=True)


def test_predict_proba_zero_head_is_uniform():
    cfg = tiny_config(num_classes=4)
    p = init_params(cfg)
    p.head_w.data[:] = 0
    probs = predict_proba(p, cfg, np.random.default_rng(9).normal(size=(3, 3, 8)))
    np.testing.assert_allclose(probs, 0.25, atol=1e-15)


def test_predict_proba_properties():
    cfg = tiny_config()
    p = random_params(cfg)
    x = np.random.default_rng(10).normal(size=(6, 3, 8))
    probs = predict_proba(p, cfg, x)
    assert np.all((probs > 0) & (probs < 1))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(probs.argmax(axis=1), forward(p, cfg, x).data.argmax(axis=1))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("use_embeddings", [True, False])
def test_every_parameter_receives_gradient(kind, use_embeddings):
    cfg = tiny_config(schedule_kind=kind, use_embeddings=use_embeddings, feature_dim=8 if use_embeddings else 16)
    p = random_params(cfg, seed=11)
    rng = np.random.default_rng(12)
    x = rng.normal(size=(4, 3, cfg.feature_dim))
    with Tape():
        loss = cross_entropy(forward(p, cfg, x), [0, 1, 2, 1])
    backward(loss)
    for name, t in p.named_tensors():
        assert t.grad is not None and np.linalg.norm(t.grad) > 0, name


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(KINDS))
def test_time_mean_readout_is_permutation_invariant(seed, kind):
    cfg = tiny_config(schedule_kind=kind, use_embeddings=False, feature_dim=16, seq_len=5)
    p = random_params(cfg, seed=seed % 1000)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 5, 16))
    perm = rng.permutation(5)
    a = forward(p, cfg, x, positional=False).data
    b = forward(p, cfg, x[:, perm], positional=False).data
    np.testing.assert_allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("use_embeddings", [True, False])
def test_columnar_matches_vanilla_encoder(use_embeddings):
    cfg = ModelConfig(
        d_model=16, stages=3, heads=4, schedule_kind="columnar", feature_dim=8 if use_embeddings else 16,
        seq_len=5, num_classes=4, use_embeddings=use_embeddings, dropout=0.0,
    )
    p = random_params(cfg, seed=13)
    x = np.random.default_rng(14).normal(size=(3, 5, cfg.feature_dim))
    ref = vanilla_encoder_logits(x, oracle_weights(p), heads=4, use_embeddings=use_embeddings)
    np.testing.assert_allclose(forward(p, cfg, x).data, ref, rtol=0, atol=1e-10)


def test_flatten_unflatten_round_trip():
    cfg = tiny_config()
    p = random_params(cfg)
    vec = p.flatten()
    assert vec.size == p.num_scalars()
    q = p.unflatten(Tensor(vec))
    for (n1, a), (n2, b) in zip(p.named_tensors(), q.named_tensors()):
        assert n1 == n2
        np.testing.assert_array_equal(a.data, b.data)
