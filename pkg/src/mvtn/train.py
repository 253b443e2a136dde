"""Adam training loop with step learning-rate decay, and evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data_io import batch_indices, stack
from .errors import ConfigError, ContractError
from .model import forward, predict_proba
from .tensor import Tape, backward, cross_entropy


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 100
    lr_decay_epochs: tuple = (50, 75)
    lr_decay_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)

    def validate(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")

    def lr_at(self, epoch):
        """Learning rate used during 1-based ``epoch``; it drops at each milestone epoch."""
        steps = sum(1 for m in self.lr_decay_epochs if epoch >= m)
        return self.lr * self.lr_decay_factor ** steps

    def to_dict(self):
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        return d


@dataclass
class Adam:
    params: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(params, config, train_cfg, dataset, log=None):
    """Fit ``params`` in place; returns one dict per epoch (epoch, loss, accuracy, lr).

    ``log``, if given, is called with each epoch record as it completes.
    Loss and accuracy are running averages over the epoch's training batches.
    """
    if not dataset:
        raise ContractError("cannot train on an empty dataset")
    train_cfg.validate()
    for seq in dataset:
        if not 0 <= seq.label < config.num_classes:
            raise ContractError(f"label {seq.label} of {seq.sample_id!r} outside [0, {config.num_classes})")
    opt = Adam(params.tensors())
    drop_rng = np.random.default_rng([train_cfg.seed, 7])
    history = []
    for epoch in range(1, train_cfg.epochs + 1):
        lr = train_cfg.lr_at(epoch)
        total_loss = 0.0
        correct = 0
        for idx in batch_indices(len(dataset), train_cfg.batch_size, seed=[train_cfg.seed, epoch]):
            x, y = stack(dataset, idx)
            params.zero_grad()
            with Tape():
                logits = forward(params, config, x, training=True, rng=drop_rng)
                loss = cross_entropy(logits, y)
            backward(loss)
            opt.step(lr)
            total_loss += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == np.asarray(y)).sum())
        record = {
            "epoch": epoch,
            "loss": total_loss / len(dataset),
            "accuracy": correct / len(dataset),
            "lr": lr,
        }
        history.append(record)
        if log is not None:
            log(record)
    return history


def predict_dataset(params, config, dataset, batch_size=32):
    """N x num_classes probability matrix in dataset order."""
    if not dataset:
        raise ContractError("cannot evaluate an empty dataset")
    out = []
    for idx in batch_indices(len(dataset), batch_size, shuffle=False):
        x, _ = stack(dataset, idx)
        out.append(predict_proba(params, config, x))
    return np.concatenate(out, axis=0)


def evaluate(params, config, dataset, batch_size=32):
    """Eval-mode accuracy and the probability matrix it was computed from."""
    probs = predict_dataset(params, config, dataset, batch_size)
    labels = np.array([s.label for s in dataset])
    return float((probs.argmax(axis=1) == labels).mean()), probs
