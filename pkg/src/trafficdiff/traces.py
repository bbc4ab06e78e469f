"""Loading, toy generation, normalization and splitting of 1D traffic traces."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class TraceFormatError(ValueError):
    """Raised for malformed trace files; ``problems`` lists (path, message)."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        lines = "\n".join(f"  {p}: {m}" for p, m in problems)
        super().__init__(f"{len(problems)} malformed trace file(s):\n{lines}")


@dataclass
class RawTrace:
    values: np.ndarray
    class_label: int
    dataset_id: str
    timestamps: np.ndarray | None = None
    trace_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("trace values must be a non-empty 1D sequence")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.float64)
            if ts.shape != self.values.shape:
                raise ValueError("timestamps and values differ in length")
            if ts.size and (ts[0] < 0 or np.any(np.diff(ts) < 0)):
                raise ValueError("timestamps must be non-negative and non-decreasing")
            self.timestamps = ts


@dataclass
class NormalizedTrace:
    samples: np.ndarray
    class_label: int
    dataset_id: str
    trace_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size and (self.samples.min() < 0.0 or self.samples.max() > 1.0):
            raise ValueError("normalized samples must lie in [0, 1]")


@dataclass(frozen=True)
class DatasetSpec:
    """Shape of one dataset.

    ``feature`` picks the toy family and the single channel fed to GASF:
    ``bytes`` (binned bytes downloaded), ``direction`` (+1/-1 per packet) or
    ``packet`` (signed packet size, size x direction).
    """

    dataset_id: str
    target_length: int
    num_classes: int
    traces_per_class: int
    bin_width: float | None = None
    feature: str = "bytes"
    anomaly_classes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.target_length < 2:
            raise ValueError("target_length must be >= 2")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.traces_per_class < 1:
            raise ValueError("traces_per_class must be >= 1")
        if self.bin_width is not None and self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.feature not in ("bytes", "direction", "packet"):
            raise ValueError(f"unknown feature kind {self.feature!r}")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    ordering: str = "sequential-first-fraction"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.ordering != "sequential-first-fraction":
            raise ValueError(f"unsupported ordering {self.ordering!r}")


def bin_trace(raw: RawTrace, bin_width: float) -> RawTrace:
    """Sum values into non-overlapping ``[k*w, (k+1)*w)`` bins."""
    if raw.timestamps is None:
        raise ValueError("unbinnable trace: no timestamps")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    idx = np.floor(raw.timestamps / bin_width).astype(np.int64)
    nbins = int(idx.max()) + 1
    binned = np.bincount(idx, weights=raw.values, minlength=nbins)
    return RawTrace(
        values=binned,
        class_label=raw.class_label,
        dataset_id=raw.dataset_id,
        timestamps=np.arange(nbins) * bin_width,
        trace_id=raw.trace_id,
    )


def fix_length(values: Sequence[float], target: int) -> np.ndarray:
    """Truncate to the first ``target`` samples or zero-pad up to it."""
    if target < 1:
        raise ValueError("target length must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    if v.size >= target:
        return v[:target].copy()
    return np.concatenate([v, np.zeros(target - v.size)])


def minmax_normalize(values: Sequence[float]) -> np.ndarray:
    """Per-trace min-max scaling to [0, 1]; a constant trace maps to zeros."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot normalize an empty sequence")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    out = (v - lo) / (hi - lo)
    # guards the arccos domain against last-ulp overshoot
    return np.clip(out, 0.0, 1.0)


def preprocess(raw: RawTrace, spec: DatasetSpec) -> NormalizedTrace:
    """bin (when the dataset is binned and timestamps exist) -> fix_length -> normalize."""
    values = raw.values
    if spec.bin_width is not None and raw.timestamps is not None:
        values = bin_trace(raw, spec.bin_width).values
    samples = minmax_normalize(fix_length(values, spec.target_length))
    return NormalizedTrace(samples, raw.class_label, raw.dataset_id, raw.trace_id)


def split_dataset(traces: Sequence[NormalizedTrace], spec: SplitSpec = SplitSpec()):
    """Per class, the first floor(f*m) traces in input order go to train."""
    by_class: dict[int, list[int]] = {}
    for i, tr in enumerate(traces):
        by_class.setdefault(tr.class_label, []).append(i)
    train_idx, test_idx = [], []
    for label, idx in sorted(by_class.items()):
        m = len(idx)
        if m < 2:
            raise ValueError(f"class {label} has {m} trace(s); need at least 2 to split")
        k = math.floor(spec.train_fraction * m)
        # keep both sides non-empty
        k = min(max(k, 1), m - 1)
        train_idx.extend(idx[:k])
        test_idx.extend(idx[k:])
    train_idx.sort()
    test_idx.sort()
    return [traces[i] for i in train_idx], [traces[i] for i in test_idx]


# ---------------------------------------------------------------------------
# toy generator


def _class_profile(rng: np.random.Generator, label: int, n: int, anomaly_rank: int | None) -> np.ndarray:
    """Latent intensity in roughly [0, 1] for one trace of class ``label``.

    Anomalous classes get a smoothed random walk over a monotone ramp; the
    ramp direction and curvature depend on the class's rank among anomalies.
    """
    t = np.arange(n) / n
    if anomaly_rank is not None:
        walk = np.cumsum(rng.normal(0.0, 1.0, n))
        walk = np.convolve(walk, np.ones(5) / 5, mode="same")
        walk -= walk.min()
        walk /= max(walk.max(), 1e-9)
        ramp = t ** (1 + anomaly_rank // 2)
        if anomaly_rank % 2:
            ramp = ramp[::-1]
        return 0.05 + 0.6 * ramp + 0.35 * walk
    cycles = 1.5 + 1.25 * label
    phase = 0.9 * label
    freq = cycles * (1.0 + rng.normal(0.0, 0.03))
    shift = rng.normal(0.0, 0.25)
    amp = rng.uniform(0.8, 1.0)
    level = 0.5 + 0.4 * amp * np.sin(2 * np.pi * freq * t + phase + shift)
    bursts = rng.random(n) < 0.01
    level = level + bursts * rng.exponential(0.3, n)
    level = level + rng.normal(0.0, 0.04, n)
    return np.clip(level, 0.02, None)


def gen_toy_dataset(spec: DatasetSpec, seed: int) -> list[RawTrace]:
    """Seeded stand-in for a real dataset; classes differ in periodicity.

    Classes listed in ``spec.anomaly_classes`` are aperiodic ramped random
    walks, off the manifold of the periodic classes but distinct from each other.
    """
    rng = np.random.default_rng(seed)
    n = spec.target_length
    out: list[RawTrace] = []
    for label in range(spec.num_classes):
        anomalies = sorted(spec.anomaly_classes)
        rank = anomalies.index(label) if label in anomalies else None
        for i in range(spec.traces_per_class):
            level = _class_profile(rng, label, n, rank)
            tid = f"c{label}-t{i:04d}"
            if spec.feature == "bytes" and spec.bin_width is not None:
                counts = rng.poisson(60.0 * level)
                k = np.repeat(np.arange(n), counts)
                ts = (k + rng.random(k.size)) * spec.bin_width
                order = np.argsort(ts, kind="stable")
                sizes = rng.uniform(200.0, 1500.0, k.size)
                if k.size == 0:
                    ts, sizes = np.zeros(1), np.zeros(1)
                else:
                    ts, sizes = ts[order], sizes[order]
                out.append(RawTrace(sizes, label, spec.dataset_id, ts, tid))
            elif spec.feature == "bytes":
                values = np.round(1e5 * level * rng.uniform(0.9, 1.1, n))
                out.append(RawTrace(values, label, spec.dataset_id, None, tid))
            else:
                # variable packet count so truncation and padding both occur
                m = int(n * rng.uniform(0.8, 1.2))
                lv = np.interp(np.linspace(0, n - 1, m), np.arange(n), level)
                p_up = 0.1 + 0.8 * np.clip(lv, 0.0, 1.0)
                direction = np.where(rng.random(m) < p_up, 1.0, -1.0)
                if spec.feature == "direction":
                    values = direction
                else:
                    size = np.round(60 + 1400 * np.clip(lv + rng.normal(0, 0.05, m), 0, 1))
                    values = size * direction
                out.append(RawTrace(values, label, spec.dataset_id, None, tid))
    return out


# ---------------------------------------------------------------------------
# CSV interface

MANIFEST_NAME = "dataset.manifest"


def read_dataset_manifest(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    entries = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        entries[key] = value
    return entries


def spec_from_manifest(entries: dict[str, str]) -> DatasetSpec:
    bw = entries.get("bin_width", "none").lower()
    return DatasetSpec(
        dataset_id=entries["dataset_id"],
        target_length=int(entries["target_length"]),
        num_classes=int(entries["num_classes"]),
        traces_per_class=int(entries.get("traces_per_class", 0)) or 1,
        bin_width=None if bw in ("", "none") else float(bw),
        feature=entries.get("feature", "bytes"),
    )


def _read_trace_csv(path: Path) -> tuple[np.ndarray | None, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError("empty file")
    header = [h.strip().lower() for h in rows[0]]
    body = rows[1:]
    if header == ["value"]:
        ts = None
        vals = [float(r[0]) for r in body if r]
    elif header == ["timestamp", "value"]:
        pairs = [(float(r[0]), float(r[1])) for r in body if r]
        ts = np.array([p[0] for p in pairs])
        vals = [p[1] for p in pairs]
    else:
        raise ValueError(f"unexpected header {rows[0]}")
    if not vals:
        raise ValueError("no samples")
    return ts, np.asarray(vals, dtype=np.float64)


def load_csv_dataset(root: str | Path, dataset_id: str) -> tuple[DatasetSpec | None, list[RawTrace]]:
    """Load ``<root>/<dataset_id>/<class_label>/<trace_id>.csv`` files.

    Also accepts a single long-format file ``<root>/<dataset_id>.csv`` with
    columns ``trace_id,class_label[,timestamp],value``. Returns the spec from
    ``dataset.manifest`` when one is present.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"input directory not found: {root}")
    ds_dir = root / dataset_id
    long_file = root / f"{dataset_id}.csv"
    spec = None
    for cand in (ds_dir / MANIFEST_NAME, root / MANIFEST_NAME):
        if cand.is_file():
            spec = spec_from_manifest(read_dataset_manifest(cand))
            break
    if not ds_dir.is_dir() and long_file.is_file():
        return spec, _load_long_csv(long_file, dataset_id)
    if not ds_dir.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {ds_dir}")

    traces, problems = [], []
    for class_dir in sorted(p for p in ds_dir.iterdir() if p.is_dir()):
        try:
            label = int(class_dir.name)
        except ValueError:
            problems.append((str(class_dir), "class directory name is not an integer"))
            continue
        for f in sorted(class_dir.glob("*.csv")):
            try:
                ts, vals = _read_trace_csv(f)
                traces.append(RawTrace(vals, label, dataset_id, ts, f.stem))
            except (ValueError, IndexError) as exc:
                problems.append((str(f), str(exc)))
    if problems:
        raise TraceFormatError(problems)
    traces.sort(key=lambda r: (r.class_label, r.trace_id))
    return spec, traces


def _load_long_csv(path: Path, dataset_id: str) -> list[RawTrace]:
    groups: dict[tuple[int, str], tuple[list, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if not {"trace_id", "class_label", "value"} <= cols:
            raise TraceFormatError([(str(path), f"missing columns, got {sorted(cols)}")])
        has_ts = "timestamp" in cols
        for row in reader:
            key = (int(row["class_label"]), row["trace_id"])
            ts, vals = groups.setdefault(key, ([], []))
            if has_ts:
                ts.append(float(row["timestamp"]))
            vals.append(float(row["value"]))
    return [
        RawTrace(np.array(v), label, dataset_id, np.array(t) if t else None, tid)
        for (label, tid), (t, v) in sorted(groups.items())
    ]


def write_csv_dataset(root: str | Path, spec: DatasetSpec, traces: Iterable[RawTrace]) -> Path:
    """Write traces in the per-file layout plus a ``dataset.manifest``."""
    ds_dir = Path(root) / spec.dataset_id
    ds_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"dataset_id = {spec.dataset_id}",
        f"bin_width = {spec.bin_width if spec.bin_width is not None else 'none'}",
        f"target_length = {spec.target_length}",
        f"num_classes = {spec.num_classes}",
        f"traces_per_class = {spec.traces_per_class}",
        f"feature = {spec.feature}",
    ]
    (ds_dir / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    for tr in traces:
        cdir = ds_dir / str(tr.class_label)
        cdir.mkdir(exist_ok=True)
        with open(cdir / f"{tr.trace_id}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            if tr.timestamps is None:
                w.writerow(["value"])
                w.writerows([repr(float(v))] for v in tr.values)
            else:
                w.writerow(["timestamp", "value"])
                w.writerows(zip(map(repr, tr.timestamps.tolist()), map(repr, tr.values.tolist())))
    return ds_dir
