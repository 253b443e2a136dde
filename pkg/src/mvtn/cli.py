"""Command-line entry point: ``mvtn {synth,train,eval,fuse,count,gradcheck}``.

Exit codes: 0 success, 1 validation error, 2 runtime or IO error.
"""

from __future__ import annotations

import argparse
import json
import sys
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import __version__
from .attention import ScheduleKind
from .checkpoint import load_checkpoint, save_checkpoint
from .cost import cost_report, format_table
from .data_io import (
    ProbRecord,
    SynthSpec,
    load_dataset,
    read_manifest,
    read_probs,
    synth_dataset,
    write_dataset,
    write_probs,
)
from .errors import ConfigError, ContractError, FormatError, ShapeError
from .fusion import align_prob_files, fuse_accuracy
from .model import ModelConfig, init_params, model_grad_check
from .train import TrainConfig, evaluate, train

GRADCHECK_TOL = 1e-4


@dataclass
class RunConfig:
    """Flat union of model, training and path settings.

    ``feature_dim``, ``seq_len`` and ``num_classes`` default to the values
    in the manifest. Relative paths resolve against the config file.
    """

    d_model: int = 512
    stages: int = 6
    heads: int = 8
    schedule_kind: str = "p_dim"
    ffn_mult: int = 4
    feature_dim: typing.Optional[int] = None
    seq_len: typing.Optional[int] = None
    num_classes: typing.Optional[int] = None
    use_embeddings: bool = True
    dropout: float = 0.1
    seed: int = 0
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 100
    lr_decay_epochs: list = (50, 75)
    lr_decay_factor: float = 0.1
    manifest: typing.Optional[str] = None
    checkpoint: typing.Optional[str] = None
    out_dir: str = "run"

    @classmethod
    def from_dict(cls, doc, base=Path(".")):
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key, value in doc.items():
            _check_type(key, value, hints[key])
        cfg = cls(**doc)
        for key in ("manifest", "checkpoint", "out_dir"):
            value = getattr(cfg, key)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, key, str(base / value))
        cfg.lr_decay_epochs = list(cfg.lr_decay_epochs)
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at byte {e.pos}: {e.msg}") from None
        return cls.from_dict(doc, base=path.parent)

    def model_config(self):
        missing = [k for k in ("feature_dim", "seq_len", "num_classes") if getattr(self, k) is None]
        if missing:
            raise ConfigError(f"{missing} not set and no manifest to take them from")
        keys = {f.name for f in fields(ModelConfig)}
        cfg = ModelConfig(**{k: v for k, v in asdict(self).items() if k in keys})
        cfg.validate()
        return cfg

    def train_config(self):
        cfg = TrainConfig(
            lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
            lr_decay_epochs=tuple(self.lr_decay_epochs), lr_decay_factor=self.lr_decay_factor,
            seed=self.seed,
        )
        cfg.validate()
        return cfg

    def bind_manifest(self, manifest):
        """Fill dataset dimensions from ``manifest``; reject explicit mismatches."""
        for key in ("feature_dim", "seq_len", "num_classes"):
            want = getattr(manifest, key)
            have = getattr(self, key)
            if have is None:
                setattr(self, key, want)
            elif have != want:
                raise ConfigError(f"config {key}={have} but manifest has {want}")


def _check_type(key, value, hint):
    origin = typing.get_origin(hint)
    allowed = typing.get_args(hint) if origin is typing.Union else (hint,)
    ok = False
    for t in allowed:
        if t is type(None):
            ok = ok or value is None
        elif t is float:
            ok = ok or (isinstance(value, (int, float)) and not isinstance(value, bool))
        elif t is int:
            ok = ok or (isinstance(value, int) and not isinstance(value, bool))
        elif t is list:
            ok = ok or (isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value))
        else:
            ok = ok or isinstance(value, t)
    if not ok:
        raise ConfigError(f"config key {key!r}: {value!r} has the wrong type")


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "schedule", None) is not None:
        cfg.schedule_kind = args.schedule
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    return cfg


# commands


def cmd_synth(args):
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(SynthSpec)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown synth config keys: {unknown}")
    spec = SynthSpec(**doc)
    flag_map = {
        "classes": "num_classes", "per_class": "samples_per_class", "seq_len": "seq_len",
        "feature_dim": "feature_dim", "separation": "class_separation", "sigma": "noise_sigma",
        "seed": "seed", "modality": "modality",
    }
    spec = replace(spec, **{v: getattr(args, k) for k, v in flag_map.items() if getattr(args, k) is not None})
    try:
        spec.validate()
    except ContractError as e:
        raise ConfigError(str(e)) from None
    if args.out is None:
        raise ConfigError("synth needs --out DIR")
    dataset = synth_dataset(spec)
    manifest_path = write_dataset(dataset, args.out, spec.num_classes)
    print(
        f"wrote {len(dataset)} feature files + manifest to {manifest_path} "
        f"({spec.num_classes} classes x {spec.samples_per_class} samples, "
        f"T={spec.seq_len}, k={spec.feature_dim}, modality={spec.modality})"
    )
    return 0


def cmd_train(args):
    cfg = _apply_overrides(RunConfig.load(args.config), args)
    if cfg.manifest is None:
        raise ConfigError("train needs 'manifest' in the config")
    manifest = read_manifest(cfg.manifest, check_files=False)
    cfg.bind_manifest(manifest)
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    dataset = load_dataset(manifest)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out_dir / "model.mvtp"
    log_path = out_dir / "train_log.jsonl"
    params = init_params(model_cfg)
    with open(log_path, "w") as fh:
        def log(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
            if not args.quiet:
                print(f"epoch {rec['epoch']:4d}  loss {rec['loss']:.4f}  acc {rec['accuracy']:.4f}  lr {rec['lr']:.2e}")

        history = train(params, model_cfg, train_cfg, dataset, log=log)
    save_checkpoint(ckpt, params, model_cfg)
    final = history[-1]["accuracy"] if history else float("nan")
    print(f"checkpoint {ckpt}  log {log_path}  final train accuracy {final:.4f}")
    return 0


def cmd_eval(args):
    checkpoint, manifest_path, out = args.checkpoint, args.manifest, args.out
    if args.config:
        cfg = RunConfig.load(args.config)
        checkpoint = checkpoint or cfg.checkpoint or str(Path(cfg.out_dir) / "model.mvtp")
        manifest_path = manifest_path or cfg.manifest
        out = out or cfg.out_dir
    if not checkpoint or not manifest_path:
        raise ConfigError("eval needs --checkpoint and --manifest (or a --config naming them)")
    params, model_cfg = load_checkpoint(checkpoint)
    manifest = read_manifest(manifest_path, check_files=False)
    for key in ("feature_dim", "seq_len", "num_classes"):
        if getattr(model_cfg, key) != getattr(manifest, key):
            raise ConfigError(
                f"checkpoint {key}={getattr(model_cfg, key)} does not match manifest {getattr(manifest, key)}"
            )
    dataset = load_dataset(manifest)
    accuracy, probs = evaluate(params, model_cfg, dataset)
    records = [
        ProbRecord(s.sample_id, s.modality, row.tolist(), int(s.label)) for s, row in zip(dataset, probs)
    ]
    out_path = _prob_path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_probs(records, out_path)
    print(f"accuracy {accuracy:.4f} on {len(dataset)} samples; probabilities -> {out_path}")
    return 0


def _prob_path(out):
    if out is None:
        return Path("probs.json")
    out = Path(out)
    return out if out.suffix == ".json" else out / "probs.json"


def cmd_fuse(args):
    files = [read_probs(p) for p in args.files]
    ids, per_sample, labels = align_prob_files(files)
    if any(y is None for y in labels):
        raise ContractError("probability files carry no labels; cannot score fusion")
    report = {"samples": len(ids), "modalities": []}
    for path, records in zip(args.files, files):
        by_id = {r.sample_id: r for r in records}
        single = fuse_accuracy([[(by_id[i].modality, by_id[i].probs)] for i in ids], labels)
        tag = records[0].modality if records else "?"
        report["modalities"].append({"file": str(path), "modality": tag, "accuracy": single})
        print(f"{tag:>12s}  {single:.4f}  ({path})")
    fused = fuse_accuracy(per_sample, labels)
    report["fused_accuracy"] = fused
    print(f"{'fused':>12s}  {fused:.4f}  ({len(files)} inputs, {len(ids)} samples)")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    return 0


def _base_model_config(args, defaults):
    cfg = RunConfig(**defaults)
    if args.config:
        cfg = RunConfig.load(args.config)
        for key, value in defaults.items():
            if getattr(cfg, key) is None:
                setattr(cfg, key, value)
    return _apply_overrides(cfg, args)


def cmd_count(args):
    cfg = _base_model_config(args, {"feature_dim": 512, "seq_len": 40, "num_classes": 25})
    kinds = [args.schedule] if args.schedule else [k.value for k in ScheduleKind]
    reports, skipped = [], []
    for kind in kinds:
        cfg.schedule_kind = kind
        try:
            reports.append(cost_report(cfg.model_config()))
        except ConfigError as e:
            skipped.append((kind, str(e)))
    if not reports:
        raise ConfigError("; ".join(msg for _, msg in skipped))
    if args.json:
        print(json.dumps([r.to_dict() for r in reports], indent=2))
    else:
        print(format_table(reports))
        for kind, msg in skipped:
            print(f"skipped {kind}: {msg}")
    return 0


def cmd_gradcheck(args):
    defaults = {
        "d_model": 16, "stages": 2, "heads": 2, "feature_dim": 8, "seq_len": 3, "num_classes": 3,
    }
    if args.config:
        cfg = _base_model_config(args, {k: defaults[k] for k in ("feature_dim", "seq_len", "num_classes")})
    else:
        cfg = _apply_overrides(RunConfig(**defaults), args)
    model_cfg = cfg.model_config()
    err = model_grad_check(model_cfg, seed=model_cfg.seed)
    verdict = "ok" if err < GRADCHECK_TOL else "FAIL"
    print(
        f"gradcheck {model_cfg.schedule_kind} D={model_cfg.d_model} stages={model_cfg.stages} "
        f"heads={model_cfg.heads}: max relative error {err:.3e} ({verdict}, tol {GRADCHECK_TOL:g})"
    )
    return 0 if err < GRADCHECK_TOL else 1


def build_parser():
    p = argparse.ArgumentParser(prog="mvtn", description="Multiscale video transformer on feature sequences")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    schedules = [k.value for k in ScheduleKind]

    s = sub.add_parser("synth", help="generate a synthetic gesture dataset")
    s.add_argument("--config", help="JSON with SynthSpec keys")
    s.add_argument("--out", help="output directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--classes", type=int)
    s.add_argument("--per-class", type=int)
    s.add_argument("--seq-len", type=int)
    s.add_argument("--feature-dim", type=int)
    s.add_argument("--separation", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--modality")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--schedule", choices=schedules)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint and write class probabilities")
    e.add_argument("--config")
    e.add_argument("--checkpoint")
    e.add_argument("--manifest")
    e.add_argument("--out", help="directory (writes probs.json) or a .json path")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fuse", help="late-fuse probability files, one per modality")
    f.add_argument("files", nargs="+")
    f.add_argument("--out", help="write the report as JSON here")
    f.set_defaults(func=cmd_fuse)

    c = sub.add_parser("count", help="parameter and MAC table for every schedule")
    c.add_argument("--config")
    c.add_argument("--schedule", choices=schedules)
    c.add_argument("--seed", type=int)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_count)

    g = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    g.add_argument("--config")
    g.add_argument("--schedule", choices=schedules)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
