"""Feature-sequence files, dataset manifests, synthetic gestures and batching.

MVTF feature file layout (all integers unsigned 32-bit little-endian)::

    b"MVTF" | version | T | k | label
    | len(modality) | modality utf-8 | len(sample_id) | sample_id utf-8
    | T*k float32 little-endian, row-major (frame by frame)
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .tensor import Tensor

FEATURE_MAGIC = b"MVTF"
FEATURE_VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class FeatureSequence:
    frames: np.ndarray
    label: int
    modality: str = "color"
    sample_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ContractError(f"frames must be T x k with T >= 1, got {self.frames.shape}")

    @property
    def seq_len(self):
        return self.frames.shape[0]

    @property
    def feature_dim(self):
        return self.frames.shape[1]


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated while reading {what}: need {n} bytes, {len(self.buf) - self.pos} left",
                offset=self.pos, path=self.path,
            )
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]

    def text(self, what):
        n = self.u32(f"{what} length")
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", offset=start, path=self.path) from None


def _text(s):
    raw = s.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def encode_features(seq):
    if not np.all(np.isfinite(seq.frames)):
        raise ContractError(f"sample {seq.sample_id!r} has non-finite feature values")
    T, k = seq.frames.shape
    header = FEATURE_MAGIC + struct.pack("<IIII", FEATURE_VERSION, T, k, int(seq.label))
    payload = seq.frames.astype("<f4").tobytes()
    return header + _text(seq.modality) + _text(seq.sample_id) + payload


def decode_features(buf, path=None):
    r = _Reader(buf, path)
    magic = r.take(4, "magic")
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}", offset=0, path=path)
    version = r.u32("version")
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature format version {version}", offset=4, path=path)
    T = r.u32("T")
    k = r.u32("k")
    label = r.u32("label")
    if T < 1 or k < 1:
        raise FormatError(f"empty feature block T={T}, k={k}", offset=8, path=path)
    modality = r.text("modality")
    sample_id = r.text("sample_id")
    payload = r.take(4 * T * k, "feature payload")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after payload", offset=r.pos, path=path)
    frames = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(T, k)
    return FeatureSequence(frames, label, modality, sample_id)


def write_features(seq, path):
    Path(path).write_bytes(encode_features(seq))


def read_features(path):
    return decode_features(Path(path).read_bytes(), path=path)


# manifests


@dataclass
class ManifestEntry:
    path: str
    label: int
    modality: str
    sample_id: str


@dataclass
class DatasetManifest:
    entries: list
    num_classes: int
    feature_dim: int
    seq_len: int
    root: Path = field(default=Path("."), compare=False)

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "seq_len": self.seq_len,
            "entries": [vars(e).copy() for e in self.entries],
        }

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p


def write_manifest(manifest, path):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


def read_manifest(path, check_files=True):
    """Load a manifest; with ``check_files`` every referenced file is opened and checked."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError as e:
        raise FormatError(f"manifest is not UTF-8: {e.reason}", offset=e.start, path=path) from None
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {e.msg}", offset=e.pos, path=path) from None
    try:
        entries = [
            ManifestEntry(str(e["path"]), int(e["label"]), str(e["modality"]), str(e["sample_id"]))
            for e in doc["entries"]
        ]
        manifest = DatasetManifest(
            entries, int(doc["num_classes"]), int(doc["feature_dim"]), int(doc["seq_len"]), root=path.parent
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"manifest missing or malformed field: {e}", path=path) from None
    seen = set()
    for e in entries:
        key = (e.modality, e.sample_id)
        if key in seen:
            raise FormatError(f"duplicate sample_id {e.sample_id!r} for modality {e.modality!r}", path=path)
        seen.add(key)
        if not 0 <= e.label < manifest.num_classes:
            raise FormatError(f"label {e.label} of {e.sample_id!r} outside [0, {manifest.num_classes})", path=path)
    if check_files:
        load_dataset(manifest)
    return manifest


def load_dataset(manifest):
    """Read every sequence of a manifest, failing fast on any dimension mismatch."""
    out = []
    for e in manifest.entries:
        f = manifest.resolve(e)
        if not f.exists():
            raise FormatError(f"missing feature file for {e.sample_id!r}", path=f)
        seq = read_features(f)
        if seq.feature_dim != manifest.feature_dim:
            raise FormatError(f"feature width {seq.feature_dim} != manifest {manifest.feature_dim}", path=f)
        # no padding or cropping: lengths must match exactly
        if seq.seq_len != manifest.seq_len:
            raise FormatError(f"{seq.seq_len} frames, manifest fixes {manifest.seq_len}", path=f)
        if seq.label != e.label or seq.sample_id != e.sample_id or seq.modality != e.modality:
            raise FormatError(f"file header disagrees with manifest entry {e.sample_id!r}", path=f)
        out.append(seq)
    return out


# synthetic gestures


@dataclass
class SynthSpec:
    num_classes: int = 4
    samples_per_class: int = 25
    seq_len: int = 10
    feature_dim: int = 32
    class_separation: float = 1.0
    noise_sigma: float = 0.1
    seed: int = 0
    modality: str = "synthetic"

    def validate(self):
        if self.num_classes < 2:
            raise ContractError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.samples_per_class < 1 or self.seq_len < 1 or self.feature_dim < 1:
            raise ContractError("samples_per_class, seq_len and feature_dim must all be >= 1")
        if not self.class_separation > 0:
            raise ContractError(f"class_separation must be > 0, got {self.class_separation}")
        if not self.noise_sigma >= 0:
            raise ContractError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def class_trajectories(spec):
    """Noise-free C x T x k base trajectory of every class.

    Class c traces a circle at frequency c + 1 in its own 2-d latent plane;
    a seeded random map with unit-norm rows lifts the planes to ``feature_dim``.
    """
    rng = np.random.default_rng(spec.seed)
    C, T, k = spec.num_classes, spec.seq_len, spec.feature_dim
    lift = rng.normal(size=(2 * C, k))
    lift /= np.linalg.norm(lift, axis=1, keepdims=True)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=C)
    t = np.arange(T) / T
    out = np.empty((C, T, k))
    for c in range(C):
        angle = 2.0 * math.pi * (c + 1) * t + phase[c]
        latent = np.stack([np.sin(angle), np.cos(angle)], axis=1)
        out[c] = spec.class_separation * latent @ lift[2 * c:2 * c + 2]
    return out


def synth_dataset(spec):
    """Balanced, seeded list of noisy sequences, ordered class by class."""
    spec.validate()
    base = class_trajectories(spec)
    noise_rng = np.random.default_rng([spec.seed, 1])
    out = []
    for c in range(spec.num_classes):
        for i in range(spec.samples_per_class):
            frames = base[c] + spec.noise_sigma * noise_rng.normal(size=base[c].shape)
            out.append(FeatureSequence(frames, c, spec.modality, f"c{c:02d}_s{i:04d}"))
    return out


def split_dataset(dataset, holdout_fraction, seed=0):
    """Stratified train / held-out split; each class contributes the same fraction."""
    rng = np.random.default_rng(seed)
    by_class = {}
    for i, seq in enumerate(dataset):
        by_class.setdefault(seq.label, []).append(i)
    train, held = [], []
    for label in sorted(by_class):
        idx = rng.permutation(by_class[label])
        n_held = int(round(holdout_fraction * len(idx)))
        held.extend(idx[:n_held].tolist())
        train.extend(idx[n_held:].tolist())
    return [dataset[i] for i in sorted(train)], [dataset[i] for i in sorted(held)]


def write_dataset(dataset, out_dir, num_classes):
    """Write one MVTF file per sequence plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not dataset:
        raise ContractError("cannot write an empty dataset")
    entries = []
    for seq in dataset:
        name = f"{seq.modality}_{seq.sample_id}.mvtf"
        write_features(seq, out_dir / name)
        entries.append(ManifestEntry(name, int(seq.label), seq.modality, seq.sample_id))
    manifest = DatasetManifest(entries, num_classes, dataset[0].feature_dim, dataset[0].seq_len, root=out_dir)
    path = out_dir / "manifest.json"
    write_manifest(manifest, path)
    return path


# batching


def batch_indices(n, batch_size, seed=0, shuffle=True):
    """Partition ``range(n)`` into consecutive batches; the last one may be short."""
    if n < 1:
        raise ContractError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    return [order[i:i + batch_size].tolist() for i in range(0, n, batch_size)]


def stack(dataset, indices):
    frames = np.stack([dataset[i].frames for i in indices])
    return Tensor._wrap(frames), [int(dataset[i].label) for i in indices]


def batches(dataset, batch_size, seed=0, shuffle=True):
    """Yield ``(B x T x k Tensor, labels)`` covering every sample once."""
    for idx in batch_indices(len(dataset), batch_size, seed, shuffle):
        yield stack(dataset, idx)


# probability files


@dataclass
class ProbRecord:
    sample_id: str
    modality: str
    probs: list
    label: int | None = None


def write_probs(records, path):
    doc = []
    for r in records:
        item = {"sample_id": r.sample_id, "modality": r.modality, "probs": [float(p) for p in r.probs]}
        if r.label is not None:
            item["label"] = int(r.label)
        doc.append(item)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_probs(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError as e:
        raise FormatError(f"probability file is not UTF-8: {e.reason}", offset=e.start, path=path) from None
    except json.JSONDecodeError as e:
        raise FormatError(f"probability file is not valid JSON: {e.msg}", offset=e.pos, path=path) from None
    if not isinstance(doc, list):
        raise FormatError("probability file must hold a JSON array", path=path)
    out = []
    for i, item in enumerate(doc):
        try:
            label = item.get("label")
            out.append(
                ProbRecord(
                    str(item["sample_id"]), str(item["modality"]),
                    [float(p) for p in item["probs"]],
                    None if label is None else int(label),
                )
            )
        except (KeyError, TypeError, ValueError, AttributeError):
            raise FormatError(f"record {i} is malformed", path=path) from None
    return out
