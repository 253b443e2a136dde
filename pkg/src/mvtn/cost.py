"""Closed-form parameter and multiply-accumulate counts for a ModelConfig.

MACs follow the matmul rule (m x k)(k x n) -> m*k*n and ignore softmax,
normalisation, activations and additions. Counts are for batch size 1.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .attention import ScheduleKind, sra_param_count
from .errors import ContractError


@dataclass
class StageCost:
    stage: int
    d_attn: int
    params: int
    macs: int


@dataclass
class CostReport:
    schedule_kind: str
    params_total: int
    macs_total: int
    embed_params: int
    head_params: int
    embed_macs: int
    head_macs: int
    per_stage: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)


def matmul_macs(m, k, n):
    return m * k * n


def stage_params(d_model, d_attn, ffn_mult=4):
    D, H = d_model, ffn_mult * d_model
    norms = 2 * 2 * D
    ffn = (D * H + H) + (H * D + D)
    return sra_param_count(D, d_attn) + norms + ffn


def stage_macs(d_model, d_attn, tokens, ffn_mult=4):
    D, L = d_model, tokens
    qkv = 3 * matmul_macs(L, D, d_attn)
    # per head: (L x dh)(dh x L) and (L x L)(L x dh); summed over heads
    attend = 2 * matmul_macs(L, d_attn, L)
    out = matmul_macs(L, d_attn, D)
    ffn = 2 * matmul_macs(L, D, ffn_mult * D)
    return qkv + attend + out + ffn


def cost_report(config, seq_len=None):
    sched = config.validate()
    T = config.seq_len if seq_len is None else seq_len
    if T < 1:
        raise ContractError(f"seq_len must be >= 1, got {T}")
    D = config.d_model
    L = T + 1 if config.use_embeddings else T
    if config.use_embeddings:
        embed_params = config.feature_dim * D + D + D
        embed_macs = matmul_macs(T, config.feature_dim, D)
    else:
        embed_params = embed_macs = 0
    # final layer norm is booked with the head
    head_params = 2 * D + D * config.num_classes + config.num_classes
    head_macs = matmul_macs(1, D, config.num_classes)
    per_stage = [
        StageCost(j, d, stage_params(D, d, config.ffn_mult), stage_macs(D, d, L, config.ffn_mult))
        for j, d in enumerate(sched.dims, start=1)
    ]
    return CostReport(
        schedule_kind=ScheduleKind.parse(config.schedule_kind).value,
        params_total=embed_params + head_params + sum(s.params for s in per_stage),
        macs_total=embed_macs + head_macs + sum(s.macs for s in per_stage),
        embed_params=embed_params,
        head_params=head_params,
        embed_macs=embed_macs,
        head_macs=head_macs,
        per_stage=per_stage,
    )


def count_params(config):
    return cost_report(config).params_total


def count_macs(config, seq_len=None):
    return cost_report(config, seq_len).macs_total


def format_table(reports):
    """Aligned plain-text comparison of several reports."""
    header = ("schedule", "stage dims", "params", "params (M)", "MACs", "MACs (G)")
    rows = [header]
    for r in reports:
        dims = ",".join(str(s.d_attn) for s in r.per_stage)
        rows.append((
            r.schedule_kind, dims,
            str(r.params_total), f"{r.params_total / 1e6:.4f}",
            str(r.macs_total), f"{r.macs_total / 1e9:.4f}",
        ))
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for n, row in enumerate(rows):
        cells = [row[0].ljust(widths[0]), row[1].ljust(widths[1])]
        cells += [c.rjust(w) for c, w in zip(row[2:], widths[2:])]
        lines.append("  ".join(cells))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
