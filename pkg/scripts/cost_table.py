"""Parameter and MAC table across schedules, plus a sweep over stage count.

    python3 scripts/cost_table.py --d-model 512 --seq-len 40 --classes 25
"""

import argparse

from mvtn.attention import ScheduleKind
from mvtn.cost import cost_report, format_table
from mvtn.errors import ConfigError
from mvtn.model import ModelConfig


def reports(d_model, stages, seq_len, classes, feature_dim):
    out = []
    for kind in ScheduleKind:
        cfg = ModelConfig(d_model=d_model, stages=stages, schedule_kind=kind.value, seq_len=seq_len,
                          num_classes=classes, feature_dim=feature_dim, heads=1)
        try:
            out.append(cost_report(cfg))
        except ConfigError:
            pass
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--d-model", type=int, default=512)
    ap.add_argument("--stages", type=int, default=6)
    ap.add_argument("--seq-len", type=int, default=40)
    ap.add_argument("--classes", type=int, default=25)
    ap.add_argument("--feature-dim", type=int, default=512)
    args = ap.parse_args()

    print(format_table(reports(args.d_model, args.stages, args.seq_len, args.classes, args.feature_dim)))
    print()
    print("stage sweep: params of each pyramid relative to columnar")
    for s in range(1, args.stages + 1):
        rs = {r.schedule_kind: r for r in reports(args.d_model, s, args.seq_len, args.classes, args.feature_dim)}
        col = rs["columnar"].params_total
        ratios = "  ".join(f"{k}={rs[k].params_total / col:.3f}" for k in ("p_dim", "p_dim_plus") if k in rs)
        print(f"  S={s}: {ratios}")


if __name__ == "__main__":
    main()
