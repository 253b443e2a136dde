"""Train every pyramid schedule on the same synthetic gestures and compare.

    python3 scripts/pyramid_ablation.py --epochs 30 --d-model 64
"""

import argparse
import json
import time

from mvtn.attention import ScheduleKind
from mvtn.cost import count_macs, count_params
from mvtn.data_io import SynthSpec, split_dataset, synth_dataset
from mvtn.errors import ConfigError
from mvtn.model import ModelConfig, init_params
from mvtn.train import TrainConfig, evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--d-model", type=int, default=64)
    ap.add_argument("--stages", type=int, default=6)
    ap.add_argument("--heads", type=int, default=1)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--per-class", type=int, default=50)
    ap.add_argument("--seq-len", type=int, default=10)
    ap.add_argument("--feature-dim", type=int, default=32)
    ap.add_argument("--sigma", type=float, default=0.3)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()

    spec = SynthSpec(num_classes=args.classes, samples_per_class=args.per_class, seq_len=args.seq_len,
                     feature_dim=args.feature_dim, noise_sigma=args.sigma, seed=args.seed)
    train_set, held = split_dataset(synth_dataset(spec), 0.2, seed=args.seed)
    rows = []
    print(f"{'schedule':<11s} {'dims':<26s} {'params':>10s} {'MACs':>12s} {'train':>6s} {'held':>6s} {'sec':>6s}")
    for kind in ScheduleKind:
        cfg = ModelConfig(d_model=args.d_model, stages=args.stages, heads=args.heads, schedule_kind=kind.value,
                          feature_dim=args.feature_dim, seq_len=args.seq_len, num_classes=args.classes,
                          seed=args.seed)
        try:
            dims = cfg.validate().dims
        except ConfigError as e:
            print(f"{kind.value:<11s} skipped: {e}")
            continue
        params = init_params(cfg)
        t0 = time.perf_counter()
        train(params, cfg, TrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed), train_set)
        secs = time.perf_counter() - t0
        row = dict(schedule=kind.value, dims=list(dims), params=count_params(cfg), macs=count_macs(cfg),
                   train_acc=evaluate(params, cfg, train_set)[0], held_acc=evaluate(params, cfg, held)[0],
                   seconds=secs)
        rows.append(row)
        print(f"{kind.value:<11s} {','.join(map(str, dims)):<26s} {row['params']:>10,d} {row['macs']:>12,d} "
              f"{row['train_acc']:>6.3f} {row['held_acc']:>6.3f} {secs:>6.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
