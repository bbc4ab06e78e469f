"""Image sets, scenario assembly and evaluation report rows."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCENARIOS = ("original", "synth", "ori+synth")


@dataclass
class ImageSet:
    """Images (N, r, r) in [0, 1] with labels and stable ids.

    ``traces`` holds the normalized 1D traces when they exist (originals and
    1D-DM samples); images produced by the 2D DM have none.
    """

    images: np.ndarray
    labels: np.ndarray
    ids: list[str]
    traces: np.ndarray | None = None
    synthetic: bool = False

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        self.ids = list(self.ids)
        if not len(self.images) == len(self.labels) == len(self.ids):
            raise ValueError("images, labels and ids differ in length")
        if self.traces is not None and len(self.traces) != len(self.labels):
            raise ValueError("traces and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def counts(self) -> dict[int, int]:
        return {c: int(np.sum(self.labels == c)) for c in self.classes}

    def take(self, idx) -> "ImageSet":
        idx = np.asarray(idx, dtype=np.int64)
        return ImageSet(self.images[idx], self.labels[idx], [self.ids[i] for i in idx],
                        None if self.traces is None else self.traces[idx], self.synthetic)

    def where(self, mask) -> "ImageSet":
        return self.take(np.flatnonzero(mask))

    def first_per_class(self, k: int, classes: Iterable[int] | None = None) -> "ImageSet":
        """First k items of each class in stored order."""
        keep = []
        for c in (self.classes if classes is None else classes):
            idx = np.flatnonzero(self.labels == c)
            if len(idx) < k:
                raise ValueError(f"class {c} has {len(idx)} items, fewer than {k}")
            keep.extend(idx[:k].tolist())
        return self.take(sorted(keep))

    def relabel(self, mapping: dict[int, int]) -> "ImageSet":
        out = self.take(np.arange(len(self)))
        out.labels = np.array([mapping[int(c)] for c in self.labels])
        return out

    @staticmethod
    def concat(sets: Sequence["ImageSet"]) -> "ImageSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            raise ValueError("nothing to concatenate")
        traces = None
        if all(s.traces is not None for s in sets):
            traces = np.concatenate([s.traces for s in sets])
        return ImageSet(np.concatenate([s.images for s in sets]),
                        np.concatenate([s.labels for s in sets]),
                        [i for s in sets for i in s.ids], traces,
                        all(s.synthetic for s in sets))


def select_synthetic(pool: ImageSet, count: int, seed: int, classes=None) -> ImageSet:
    """``count`` items per class from a seeded per-class permutation.

    The permutation depends only on (pool, seed), so growing ``count`` yields
    nested subsets.
    """
    rng = np.random.default_rng(seed)
    keep = []
    for c in pool.classes:
        idx = np.flatnonzero(pool.labels == c)
        perm = idx[rng.permutation(len(idx))]
        if classes is not None and c not in classes:
            continue
        if len(perm) < count:
            raise ValueError(f"synthetic pool has {len(perm)} items for class {c}, need {count}")
        keep.extend(perm[:count].tolist())
    return pool.take(sorted(keep))


def build_training_set(scenario: str, original_train: ImageSet, synthetic_pool: ImageSet | None,
                       synth_count: int, seed: int = 0) -> ImageSet:
    if scenario == "original":
        return original_train
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    if synthetic_pool is None:
        raise ValueError(f"scenario {scenario!r} needs a synthetic pool")
    missing = set(original_train.classes) - set(synthetic_pool.classes)
    if missing:
        raise ValueError(f"synthetic pool lacks classes {sorted(missing)}")
    synth = select_synthetic(synthetic_pool, synth_count, seed, classes=original_train.classes)
    if scenario == "synth":
        return synth
    return ImageSet.concat([original_train, synth])


def check_test_purity(train: ImageSet, test: ImageSet) -> None:
    if test.synthetic:
        raise ValueError("test data must be original")
    overlap = set(train.ids) & set(test.ids)
    if overlap:
        raise ValueError(f"{len(overlap)} test item(s) also in training data, e.g. {sorted(overlap)[:3]}")


@dataclass
class EvalRow:
    dataset: str
    level: str
    scenario: str
    classifier: str
    train_size: int
    synth_count: int
    crop_length: int
    accuracy: float
    seed: int
    variant: str = ""
    train_fraction: float = 0.0


class EvalReport:
    columns = [f.name for f in fields(EvalRow)]

    def __init__(self, rows: Iterable[EvalRow] = ()):
        self.rows = list(rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def extend(self, rows):
        self.rows.extend(rows)
        return self

    def select(self, **kw) -> list[EvalRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns)
            w.writeheader()
            for r in self.rows:
                d = asdict(r)
                d["accuracy"] = repr(float(d["accuracy"]))
                w.writerow(d)

    @classmethod
    def from_csv(cls, path: str | Path) -> "EvalReport":
        types = {f.name: f.type for f in fields(EvalRow)}
        rows = []
        with open(path, newline="") as fh:
            for d in csv.DictReader(fh):
                kw = {}
                for k, v in d.items():
                    t = types[k]
                    kw[k] = int(v) if t == "int" else float(v) if t == "float" else v
                rows.append(EvalRow(**kw))
        return cls(rows)
