"""Binary model checkpoints.

Layout (integers unsigned 32-bit little-endian)::

    b"MVTP" | version | len(config json) | config json utf-8
    | for each tensor in ModelParams.named_tensors() order:
          rank | dim_1 .. dim_rank | float64 little-endian values, row-major

Tensor order: embed_w, embed_b, class_token (only with embeddings); then per
stage ln1_gain, ln1_bias, attn w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o,
ln2_gain, ln2_bias, ffn_w1, ffn_b1, ffn_w2, ffn_b2; then norm_gain,
norm_bias, head_w, head_b.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .model import ModelConfig, init_params
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MVTP"
CHECKPOINT_VERSION = 1


def encode_checkpoint(params, config):
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg]
    for _, t in params.named_tensors():
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(t.data.astype("<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf, path=None):
    def need(pos, n, what):
        if pos + n > len(buf):
            raise FormatError(f"truncated while reading {what}", offset=pos, path=path)

    need(0, 12, "header")
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {CHECKPOINT_MAGIC!r}", offset=0, path=path)
    version, n = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4, path=path)
    need(12, n, "config")
    try:
        config = ModelConfig.from_dict(json.loads(buf[12:12 + n].decode("utf-8")))
        template = init_params(config)
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ConfigError) as e:
        raise FormatError(f"unreadable model config: {e}", offset=12, path=path) from None
    pos = 12 + n
    tensors = []
    for name, t in template.named_tensors():
        need(pos, 4, f"{name} rank")
        (rank,) = struct.unpack_from("<I", buf, pos)
        need(pos + 4, 4 * rank, f"{name} dims")
        dims = struct.unpack_from(f"<{rank}I", buf, pos + 4)
        if tuple(dims) != t.shape:
            raise FormatError(f"{name} has shape {dims}, config implies {t.shape}", offset=pos, path=path)
        pos += 4 + 4 * rank
        count = int(np.prod(dims, dtype=np.int64))
        need(pos, 8 * count, f"{name} values")
        values = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
        tensors.append(Tensor(values.reshape(dims), requires_grad=True))
        pos += 8 * count
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", offset=pos, path=path)
    return template.with_tensors(tensors), config


def save_checkpoint(path, params, config):
    Path(path).write_bytes(encode_checkpoint(params, config))


def load_checkpoint(path):
    """Returns ``(params, config)``."""
    return decode_checkpoint(Path(path).read_bytes(), path=path)
