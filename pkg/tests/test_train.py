import numpy as np
import pytest

from mvtn.data_io import FeatureSequence, SynthSpec, split_dataset, synth_dataset
from mvtn.errors import ConfigError, ContractError
from mvtn.model import ModelConfig, init_params
from mvtn.train import Adam, TrainConfig, evaluate, predict_dataset, train
from mvtn.tensor import Tensor

from helpers import tiny_config


def test_lr_schedule():
    tc = TrainConfig(lr=1e-4)
    assert tc.lr_at(1) == tc.lr_at(49) == 1e-4
    assert tc.lr_at(50) == tc.lr_at(74) == pytest.approx(1e-5, rel=1e-12)
    assert tc.lr_at(75) == tc.lr_at(100) == pytest.approx(1e-6, rel=1e-12)


def test_adam_first_step_is_lr_times_sign():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    p.grad = np.array([0.5, -4.0, 1e-3])
    Adam([p]).step(0.1)
    np.testing.assert_allclose(p.data, [0.9, -1.9, 2.9], atol=1e-6)


def test_adam_matches_closed_form_on_quadratic():
    # constant gradient: bias-corrected moments equal g and g^2 at every step
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([p])
    for _ in range(5):
        p.grad = np.array([2.0, -3.0])
        opt.step(0.01)
    np.testing.assert_allclose(p.data, [-0.05, 0.05], atol=1e-9)


def test_overfit_single_sample():
    cfg = tiny_config(num_classes=3)
    frames = np.random.default_rng(0).normal(size=(3, 8))
    data = [FeatureSequence(frames, 2, "c", f"s{i}") for i in range(8)]
    params = init_params(cfg)
    hist = train(params, cfg, TrainConfig(lr=1e-2, batch_size=8, epochs=200), data)
    assert hist[-1]["loss"] < 0.01
    assert evaluate(params, cfg, data[:1])[0] == 1.0


def test_history_fields_and_lr_trace():
    cfg = tiny_config()
    data = synth_dataset(SynthSpec(num_classes=3, samples_per_class=2, seq_len=3, feature_dim=8))
    seen = []
    hist = train(init_params(cfg), cfg, TrainConfig(epochs=6, lr_decay_epochs=(3, 5)), data, log=seen.append)
    assert seen == hist
    assert [h["epoch"] for h in hist] == list(range(1, 7))
    assert [h["lr"] for h in hist] == pytest.approx([1e-4, 1e-4, 1e-5, 1e-5, 1e-6, 1e-6], rel=1e-12)
    assert all(0 <= h["accuracy"] <= 1 and np.isfinite(h["loss"]) for h in hist)


def test_training_is_deterministic():
    cfg = tiny_config(dropout=0.2)
    data = synth_dataset(SynthSpec(num_classes=3, samples_per_class=4, seq_len=3, feature_dim=8))
    runs = []
    for _ in range(2):
        p = init_params(cfg)
        h = train(p, cfg, TrainConfig(epochs=3, lr=1e-3, batch_size=5), data)
        runs.append((h, p.flatten().tobytes()))
    assert runs[0] == runs[1]


def test_train_errors():
    cfg = tiny_config()
    with pytest.raises(ContractError):
        train(init_params(cfg), cfg, TrainConfig(), [])
    bad = [FeatureSequence(np.zeros((3, 8)), 5, "c", "x")]
    with pytest.raises(ContractError):
        train(init_params(cfg), cfg, TrainConfig(), bad)
    with pytest.raises(ConfigError):
        train(init_params(cfg), cfg, TrainConfig(lr=0), bad)


def test_predictions_are_distributions():
    cfg = tiny_config()
    data = synth_dataset(SynthSpec(num_classes=3, samples_per_class=5, seq_len=3, feature_dim=8))
    probs = predict_dataset(init_params(cfg), cfg, data, batch_size=4)
    assert probs.shape == (15, 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_small_pyramid_learns_synthetic_gestures():
    spec = SynthSpec(num_classes=4, samples_per_class=20, seq_len=6, feature_dim=16)
    train_set, held = split_dataset(synth_dataset(spec), 0.25, seed=0)
    cfg = ModelConfig(d_model=16, stages=3, heads=1, feature_dim=16, seq_len=6, num_classes=4)
    params = init_params(cfg)
    train(params, cfg, TrainConfig(lr=1e-3, epochs=15), train_set)
    assert evaluate(params, cfg, held)[0] >= 0.9
