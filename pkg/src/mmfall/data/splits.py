"""Subject-wise partitioning: 70/15/15 hold-out, k-fold over subjects, leave-one-subject-out."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SplitError

STRATEGIES = ("subject_70_15_15", "kfold", "loso")


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    strategy: str
    fold: int = 0
    subjects: dict = field(default_factory=dict)   # partition -> sorted subject ids

    def partitions(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def subjects_of(windows) -> list[str]:
    return sorted({w.subject_id for w in windows})


def _holdout_counts(n: int) -> tuple[int, int, int]:
    # floor for validation, remainder to test; every partition keeps >= 1 subject
    n_train = min(max(1, int(np.floor(0.70 * n))), n - 2)
    n_val = max(1, int(np.floor(0.15 * n)))
    return n_train, n_val, n - n_train - n_val


def _carve_val(pool: list, rng: np.random.Generator) -> tuple[list, list]:
    """Take ~15% (at least one) of ``pool`` as validation subjects when possible."""
    if len(pool) < 2:
        return pool, []
    n_val = max(1, int(np.floor(0.15 * len(pool))))
    perm = list(rng.permutation(pool))
    return sorted(perm[n_val:]), sorted(perm[:n_val])


def _assemble(windows, parts: dict, strategy: str, fold: int) -> DatasetSplit:
    lookup = {s: name for name, subs in parts.items() for s in subs}
    buckets = {"train": [], "val": [], "test": []}
    for w in windows:
        buckets[lookup[w.subject_id]].append(w)
    return DatasetSplit(buckets["train"], buckets["val"], buckets["test"], strategy, fold,
                        {k: sorted(v) for k, v in parts.items()})


def make_splits(windows, strategy: str = "subject_70_15_15", seed: int = 0, k: int = 5) -> list[DatasetSplit]:
    """Partition windows by subject.

    Returns one split for ``subject_70_15_15``, ``k`` for ``kfold`` and one
    per subject for ``loso``.  For the cross-validation strategies the
    validation subjects are carved out of each fold's training subjects.
    """
    subjects = subjects_of(windows)
    n = len(subjects)
    rng = np.random.default_rng(seed)
    order = [str(s) for s in rng.permutation(subjects)]
    if strategy == "subject_70_15_15":
        if n < 3:
            raise SplitError(f"subject_70_15_15 needs at least 3 subjects, got {n}")
        n_train, n_val, _ = _holdout_counts(n)
        parts = {"train": order[:n_train], "val": order[n_train:n_train + n_val],
                 "test": order[n_train + n_val:]}
        return [_assemble(windows, parts, strategy, 0)]
    if strategy == "kfold":
        if k < 2:
            raise SplitError(f"kfold needs k >= 2, got {k}")
        if n < k:
            raise SplitError(f"kfold({k}) needs at least {k} subjects, got {n}")
        folds = [list(f) for f in np.array_split(np.array(order, dtype=object), k)]
        out = []
        for i in range(k):
            pool = [s for j, f in enumerate(folds) if j != i for s in f]
            train, val = _carve_val(pool, np.random.default_rng([seed, i]))
            out.append(_assemble(windows, {"train": train, "val": val, "test": folds[i]}, strategy, i))
        return out
    if strategy == "loso":
        if n < 2:
            raise SplitError(f"loso needs at least 2 subjects, got {n}")
        out = []
        for i, held in enumerate(subjects):
            pool = [s for s in subjects if s != held]
            train, val = _carve_val(pool, np.random.default_rng([seed, i]))
            out.append(_assemble(windows, {"train": train, "val": val, "test": [held]}, strategy, i))
        return out
    raise SplitError(f"unknown split strategy {strategy!r}; expected one of {STRATEGIES}")
