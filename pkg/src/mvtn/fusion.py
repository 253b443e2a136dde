"""Late fusion of per-modality class probabilities.

The fused score is the mean of the modality distributions, so it stays on
the simplex. The decision is taken from the correctly rounded per-class sums
(dividing by the modality count cannot reorder them). Ties go to the lowest
class index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class ModalityPrediction:
    modality: str
    probs: np.ndarray

    def __post_init__(self):
        if not self.modality:
            raise ContractError("modality tag must be nonempty")
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1 or self.probs.size < 2:
            raise ContractError(f"probability vector needs n >= 2 entries, got shape {self.probs.shape}")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-6:
            raise ContractError(f"{self.modality}: not a probability vector (sum {self.probs.sum():.8f})")


def late_fuse(preds):
    """Returns ``(class index, fused mean distribution)``."""
    if not preds:
        raise ContractError("late_fuse needs at least one modality prediction")
    preds = [p if isinstance(p, ModalityPrediction) else ModalityPrediction(*p) for p in preds]
    n = preds[0].probs.size
    for p in preds:
        if p.probs.size != n:
            raise ContractError(f"{p.modality} has {p.probs.size} classes, expected {n}")
    sums = [math.fsum(p.probs[j] for p in preds) for j in range(n)]
    best = max(sums)
    decision = sums.index(best)
    return decision, np.array(sums) / len(preds)


def fuse_accuracy(per_sample, labels):
    """Fraction of samples whose fused decision matches the label.

    ``per_sample[i]`` is the list of ModalityPrediction (or ``(tag, probs)``
    pairs) for sample i.
    """
    if len(per_sample) != len(labels):
        raise ContractError(f"{len(per_sample)} prediction sets for {len(labels)} labels")
    if not labels:
        raise ContractError("fuse_accuracy needs at least one sample")
    hits = sum(late_fuse(preds)[0] == int(y) for preds, y in zip(per_sample, labels))
    return hits / len(labels)


def align_prob_files(files):
    """Group records of several probability files by sample_id.

    ``files`` is a list of record lists (one per modality file). Returns
    ``(sample_ids, per_sample, labels)``; raises ContractError listing ids
    that are not present in every file.
    """
    if not files:
        raise ContractError("no probability files given")
    maps = []
    for records in files:
        m = {}
        for r in records:
            if r.sample_id in m:
                raise ContractError(f"sample_id {r.sample_id!r} appears twice in one file")
            m[r.sample_id] = r
        maps.append(m)
    all_ids = set().union(*(m.keys() for m in maps))
    missing = sorted(i for i in all_ids if any(i not in m for m in maps))
    if missing:
        raise ContractError(f"sample_ids missing from at least one file: {missing}")
    ids = [r.sample_id for r in files[0]]
    per_sample, labels = [], []
    for sid in ids:
        recs = [m[sid] for m in maps]
        known = {r.label for r in recs if r.label is not None}
        if len(known) > 1:
            raise ContractError(f"conflicting labels for {sid!r}: {sorted(known)}")
        labels.append(known.pop() if known else None)
        per_sample.append([ModalityPrediction(r.modality, r.probs) for r in recs])
    return ids, per_sample, labels
