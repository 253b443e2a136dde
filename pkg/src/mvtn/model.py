"""MVTN assembly: embeddings, pyramid encoder stages and classification head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import (
    SRAParams,
    ScheduleKind,
    check_heads,
    init_sra,
    pyramid_schedule,
    sra_forward,
    xavier_uniform,
)
from .errors import ConfigError, ShapeError
from .tensor import (
    Tensor,
    add,
    broadcast_to,
    concat,
    dropout,
    getitem,
    layer_norm,
    linear,
    mean,
    relu,
    reshape,
    softmax,
)


@dataclass
class ModelConfig:
    d_model: int = 512
    stages: int = 6
    heads: int = 8
    schedule_kind: str = "p_dim"
    ffn_mult: int = 4
    feature_dim: int = 512
    seq_len: int = 40
    num_classes: int = 25
    use_embeddings: bool = True
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.schedule_kind = ScheduleKind.parse(self.schedule_kind).value

    def schedule(self):
        return pyramid_schedule(self.schedule_kind, self.d_model, self.stages)

    def validate(self):
        sched = self.schedule()
        check_heads(sched, self.heads)
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for sine-cosine positions, got {self.d_model}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.seq_len < 1:
            raise ConfigError(f"seq_len must be >= 1, got {self.seq_len}")
        if self.ffn_mult < 1:
            raise ConfigError(f"ffn_mult must be >= 1, got {self.ffn_mult}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not self.use_embeddings and self.feature_dim != self.d_model:
            raise ConfigError(
                "use_embeddings=false feeds features straight into the encoder, so "
                f"feature_dim ({self.feature_dim}) must equal d_model ({self.d_model})"
            )
        return sched

    @property
    def tokens(self):
        """Sequence length seen by the encoder stages."""
        return self.seq_len + 1 if self.use_embeddings else self.seq_len

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StageParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    attn: SRAParams
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    def tensors(self):
        out = [("ln1_gain", self.ln1_gain), ("ln1_bias", self.ln1_bias)]
        out += [(f"attn.{n}", t) for n, t in self.attn.tensors()]
        out += [
            ("ln2_gain", self.ln2_gain), ("ln2_bias", self.ln2_bias),
            ("ffn_w1", self.ffn_w1), ("ffn_b1", self.ffn_b1),
            ("ffn_w2", self.ffn_w2), ("ffn_b2", self.ffn_b2),
        ]
        return out


@dataclass
class ModelParams:
    """Learnable weights of one model.

    ``embed_w``, ``embed_b`` and ``class_token`` are None when the config
    disables embeddings.
    """

    embed_w: Tensor | None
    embed_b: Tensor | None
    class_token: Tensor | None
    stages: list
    norm_gain: Tensor
    norm_bias: Tensor
    head_w: Tensor
    head_b: Tensor

    def named_tensors(self):
        """All parameter tensors in the fixed checkpoint order."""
        out = []
        if self.embed_w is not None:
            out += [("embed_w", self.embed_w), ("embed_b", self.embed_b), ("class_token", self.class_token)]
        for j, stage in enumerate(self.stages, start=1):
            out += [(f"stage{j}.{n}", t) for n, t in stage.tensors()]
        out += [
            ("norm_gain", self.norm_gain), ("norm_bias", self.norm_bias),
            ("head_w", self.head_w), ("head_b", self.head_b),
        ]
        return out

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def num_scalars(self):
        return sum(t.size for t in self.tensors())

    def zero_grad(self):
        for t in self.tensors():
            t.grad = None

    def flatten(self):
        return np.concatenate([t.data.reshape(-1) for t in self.tensors()])

    def with_tensors(self, new):
        """Same structure with parameters replaced, in ``named_tensors`` order."""
        it = iter(new)
        embed = [next(it) for _ in range(3)] if self.embed_w is not None else [None] * 3
        stages = []
        for s in self.stages:
            ln1 = (next(it), next(it))
            attn = SRAParams(*(next(it) for _ in range(8)), heads=s.attn.heads)
            rest = [next(it) for _ in range(6)]
            stages.append(StageParams(ln1[0], ln1[1], attn, *rest))
        tail = [next(it) for _ in range(4)]
        return ModelParams(*embed, stages, *tail)

    def unflatten(self, vec):
        """Rebuild the parameters as differentiable slices of one flat Tensor."""
        pieces = []
        offset = 0
        for t in self.tensors():
            n = t.size
            pieces.append(reshape(getitem(vec, slice(offset, offset + n)), t.shape))
            offset += n
        if offset != vec.size:
            raise ShapeError(f"flat vector has {vec.size} entries, parameters need {offset}")
        return self.with_tensors(pieces)

    def copy(self):
        return self.with_tensors([Tensor(t.data.copy(), requires_grad=True) for t in self.tensors()])


def _const(shape, value):
    return Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True)


def init_params(config):
    """Seeded initialisation: Xavier-uniform matrices, zero biases, unit norm gains."""
    sched = config.validate()
    rng = np.random.default_rng(config.seed)
    D = config.d_model
    hidden = config.ffn_mult * D
    if config.use_embeddings:
        embed_w = xavier_uniform(rng, config.feature_dim, D)
        embed_b = _const(D, 0.0)
        class_token = Tensor(rng.normal(0.0, 0.02, size=D), requires_grad=True)
    else:
        embed_w = embed_b = class_token = None
    stages = []
    for d_attn in sched.dims:
        stages.append(
            StageParams(
                ln1_gain=_const(D, 1.0), ln1_bias=_const(D, 0.0),
                attn=init_sra(D, d_attn, config.heads, rng),
                ln2_gain=_const(D, 1.0), ln2_bias=_const(D, 0.0),
                ffn_w1=xavier_uniform(rng, D, hidden), ffn_b1=_const(hidden, 0.0),
                ffn_w2=xavier_uniform(rng, hidden, D), ffn_b2=_const(D, 0.0),
            )
        )
    return ModelParams(
        embed_w, embed_b, class_token, stages,
        norm_gain=_const(D, 1.0), norm_bias=_const(D, 0.0),
        head_w=xavier_uniform(rng, D, config.num_classes), head_b=_const(config.num_classes, 0.0),
    )


def sinusoidal_pe(seq_len, d_model):
    """Sine on even channels, cosine on odd, frequency ``10000 ** (-2i / d_model)``."""
    if d_model % 2:
        raise ConfigError(f"sine-cosine positions need an even d_model, got {d_model}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates)
    return Tensor._wrap(pe)


def embed_sequence(features, params, config, positional=True):
    """B x T x k features -> encoder tokens.

    With embeddings: ``linear(features) + PE`` with the class token prepended
    (the class token carries no position). Without: ``features + PE`` only.
    ``positional=False`` drops PE; it exists for the permutation tests.
    """
    if features.ndim != 3:
        raise ShapeError(f"features must be B x T x k, got {features.shape}")
    B, T, k = features.shape
    if T != config.seq_len:
        raise ShapeError(f"expected {config.seq_len} frames, got {T}")
    if k != config.feature_dim:
        raise ShapeError(f"expected feature width {config.feature_dim}, got {k}")
    x = linear(features, params.embed_w, params.embed_b) if config.use_embeddings else features
    if positional:
        x = add(x, sinusoidal_pe(T, config.d_model))
    if config.use_embeddings:
        cls = broadcast_to(reshape(params.class_token, (1, 1, config.d_model)), (B, 1, config.d_model))
        x = concat([cls, x], axis=1)
    return x


def ffn(x, stage):
    return linear(relu(linear(x, stage.ffn_w1, stage.ffn_b1)), stage.ffn_w2, stage.ffn_b2)


def encoder_stage_forward(tokens, stage, drop=0.0, rng=None, training=False):
    """Pre-norm residual block: attention through the stage width, then the FFN."""
    if tokens.ndim != 3 or tokens.shape[-1] != stage.ln1_gain.shape[0]:
        raise ShapeError(f"stage expects B x L x {stage.ln1_gain.shape[0]}, got {tokens.shape}")
    h = sra_forward(layer_norm(tokens, stage.ln1_gain, stage.ln1_bias), stage.attn)
    x = add(tokens, dropout(h, drop, rng, training))
    h = ffn(layer_norm(x, stage.ln2_gain, stage.ln2_bias), stage)
    return add(x, dropout(h, drop, rng, training))


def forward(params, config, features, training=False, rng=None, positional=True):
    """Logits (B x num_classes) for a batch of feature sequences."""
    if not isinstance(features, Tensor):
        features = Tensor._wrap(np.asarray(features, dtype=np.float64))
    if training and config.dropout > 0 and rng is None:
        raise ConfigError("training with dropout needs an rng")
    x = embed_sequence(features, params, config, positional=positional)
    for stage in params.stages:
        x = encoder_stage_forward(x, stage, config.dropout, rng, training)
    x = layer_norm(x, params.norm_gain, params.norm_bias)
    pooled = getitem(x, (slice(None), 0)) if config.use_embeddings else mean(x, axis=1)
    return linear(pooled, params.head_w, params.head_b)


def predict_proba(params, config, features):
    """Class probabilities per batch row (eval mode)."""
    return softmax(forward(params, config, features), axis=-1).data


def model_grad_check(config, batch=2, seed=0, eps=1e-5):
    """Central-difference check of d(loss)/d(every parameter) for one random batch.

    Runs in eval mode so the loss is deterministic. Each scalar is nudged in
    place; the error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    from .tensor import Tape, backward, cross_entropy

    params = init_params(config)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(batch, config.seq_len, config.feature_dim)))
    y = rng.integers(0, config.num_classes, size=batch)

    def loss():
        return cross_entropy(forward(params, config, x), y)

    with Tape():
        out = loss()
    backward(out)
    worst = 0.0
    for _, t in params.named_tensors():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        for idx in np.ndindex(t.shape):
            orig = t.data[idx]
            t.data[idx] = orig + eps
            up = loss().item()
            t.data[idx] = orig - eps
            down = loss().item()
            t.data[idx] = orig
            a, n = analytic[idx], (up - down) / (2.0 * eps)
            worst = max(worst, abs(a - n) / max(1.0, abs(a), abs(n)))
    return float(worst)
