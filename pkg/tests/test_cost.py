import json

import numpy as np
import pytest

from mvtn.cost import (
    cost_report,
    count_macs,
    count_params,
    format_table,
    matmul_macs,
    stage_params,
)
from mvtn.model import ModelConfig, forward, init_params
from mvtn.tensor import count_macs as instrument

from helpers import KINDS


def full_size(kind, **kw):
    return ModelConfig(schedule_kind=kind, **kw)


def test_matmul_mac_rule():
    assert matmul_macs(2, 3, 4) == 24


def test_toy_config_hand_count():
    # embed 8*8+8, token 8 | sra 3*(64+8)+(64+8), norms 4*8, ffn (8*32+32)+(32*8+8)
    # | final norm 16 | head 8*2+2
    cfg = ModelConfig(d_model=8, stages=1, heads=1, feature_dim=8, seq_len=2, num_classes=2, ffn_mult=4)
    assert cfg.schedule().dims == (8,)
    assert count_params(cfg) == 986
    assert init_params(cfg).num_scalars() == 986


def test_rev_equals_forward_pyramid():
    for D, S in [(512, 6), (64, 3), (256, 4)]:
        a = full_size("p_dim", d_model=D, stages=S)
        b = full_size("p_dim_rev", d_model=D, stages=S)
        assert count_params(a) == count_params(b)
        assert count_macs(a) == count_macs(b)


def test_table_ordering():
    p = {k: count_params(full_size(k)) for k in KINDS}
    m = {k: count_macs(full_size(k), 40) for k in KINDS}
    assert p["p_dim"] < p["p_dim_plus"] < p["columnar"]
    assert m["p_dim"] < m["p_dim_plus"] < m["columnar"]


def test_plus_minus_pdim_gap():
    gap = count_params(full_size("p_dim_plus", num_classes=25)) - count_params(full_size("p_dim", num_classes=25))
    # the gap only involves stage widths: sum(d) differs by 2040 - 1008
    assert gap == (2040 - 1008) * (4 * 512 + 3)
    assert abs(gap - 2.12e6) / 2.12e6 < 0.15


def test_params_match_instantiation_randomized():
    rng = np.random.default_rng(0)
    for _ in range(20):
        stages = int(rng.integers(1, 5))
        heads = int(rng.choice([1, 2]))
        D = int(2 ** stages * heads * rng.integers(1, 3)) * 2
        emb = bool(rng.integers(0, 2))
        cfg = ModelConfig(
            d_model=D, stages=stages, heads=heads, schedule_kind=str(rng.choice(KINDS)),
            ffn_mult=int(rng.integers(1, 5)), feature_dim=int(rng.integers(1, 20)) if emb else D,
            seq_len=int(rng.integers(1, 9)), num_classes=int(rng.integers(2, 9)), use_embeddings=emb,
        )
        assert count_params(cfg) == init_params(cfg).num_scalars(), cfg


def test_params_monotone_in_stage_width():
    assert all(stage_params(64, d) < stage_params(64, d + 1) for d in range(1, 64))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("use_embeddings", [True, False])
def test_macs_match_instrumented_forward(kind, use_embeddings):
    cfg = ModelConfig(
        d_model=16, stages=2, heads=2, schedule_kind=kind, feature_dim=8 if use_embeddings else 16,
        seq_len=5, num_classes=3, use_embeddings=use_embeddings,
    )
    p = init_params(cfg)
    with instrument() as c:
        forward(p, cfg, np.zeros((1, 5, cfg.feature_dim)))
    assert c[0] == count_macs(cfg)


def test_report_consistency_and_json():
    r = cost_report(full_size("p_dim_plus"))
    assert r.params_total == r.embed_params + r.head_params + sum(s.params for s in r.per_stage)
    assert r.macs_total == r.embed_macs + r.head_macs + sum(s.macs for s in r.per_stage)
    assert [s.d_attn for s in r.per_stage] == [264, 272, 288, 320, 384, 512]
    doc = json.loads(r.to_json())
    assert doc["params_total"] == r.params_total and len(doc["per_stage"]) == 6


def test_format_table():
    text = format_table([cost_report(full_size(k)) for k in KINDS])
    lines = text.splitlines()
    assert len(lines) == 6
    assert len({len(line) for line in lines}) == 1
    assert "16,32,64,128,256,512" in text
