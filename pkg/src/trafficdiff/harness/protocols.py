"""Downstream evaluation protocols over original / synth / ori+synth training data.

Every protocol tests on original held-out data only and returns an
EvalReport whose rows are reproducible from (inputs, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..enhance import EnhanceConfig, enhance_batch, resize_area
from ..gasf import gasf_encode_batch
from .classifiers import ClassifierConfig, make_classifier, predictive_entropy, train_and_eval
from .data import SCENARIOS, EvalReport, EvalRow, ImageSet, build_training_set, check_test_purity

Synthesizer = Callable[[ImageSet, int, int], ImageSet]


@dataclass
class DatasetBundle:
    """One dataset's original splits, its synthetic pool and hierarchy labels."""

    dataset_id: str
    train: ImageSet
    test: ImageSet
    pool: ImageSet | None = None
    traffic_type: str | None = None
    platform: str | None = None

    @property
    def trace_length(self) -> int:
        if self.train.traces is None:
            raise ValueError(f"{self.dataset_id}: original traces unavailable")
        return self.train.traces.shape[1]


def evaluate(kind: str, train: ImageSet, test: ImageSet, seed: int,
             cfg: ClassifierConfig | None = None, use_traces: bool = False) -> float:
    check_test_purity(train, test)
    if use_traces:
        if train.traces is None or test.traces is None:
            raise ValueError("1D classification needs traces on both sides")
        return train_and_eval(kind, train.traces, train.labels, test.traces, test.labels, seed, cfg)
    return train_and_eval(kind, train.images, train.labels, test.images, test.labels, seed, cfg)


def evaluate_scenarios(dataset: str, level: str, train: ImageSet, test: ImageSet,
                       pool: ImageSet | None, synth_count: int, classifier: str, seed: int,
                       scenarios: Sequence[str] = SCENARIOS, crop_length: int = 0,
                       cfg: ClassifierConfig | None = None, train_size: int | None = None,
                       variant: str = "") -> list[EvalRow]:
    rows = []
    per_class = train_size if train_size is not None else min(train.counts().values())
    for sc in scenarios:
        tr = build_training_set(sc, train, pool, synth_count, seed)
        acc = evaluate(classifier, tr, test, seed, cfg)
        rows.append(EvalRow(dataset, level, sc, classifier, per_class,
                            0 if sc == "original" else synth_count, crop_length, acc, seed, variant))
    return rows


# ---------------------------------------------------------------------------
# hierarchical fingerprinting


def hierarchical_eval(bundles: Sequence[DatasetBundle], synth_count: int, seed: int,
                      classifier: str = "conv2d", scenarios: Sequence[str] = SCENARIOS,
                      cfg: ClassifierConfig | None = None) -> EvalReport:
    """L1 traffic type over all datasets, L2 platform within a traffic type, L3 per dataset."""
    for b in bundles:
        if b.traffic_type is None:
            raise ValueError(f"{b.dataset_id}: missing traffic_type label for L1")
    types = sorted({b.traffic_type for b in bundles})
    if len(types) < 2:
        raise ValueError("L1 needs at least two traffic types")
    report = EvalReport()
    per_scenario = {sc: {b.dataset_id: build_training_set(sc, b.train, b.pool, synth_count, seed)
                         for b in bundles} for sc in scenarios}

    def level_rows(level, data_name, members, key):
        groups = sorted({key(b) for b in members})
        gid = {g: i for i, g in enumerate(groups)}

        def merge(sets):
            return ImageSet.concat([s.relabel({c: gid[key(b)] for c in s.classes})
                                    for s, b in zip(sets, members)])

        test = merge([b.test for b in members])
        for sc in scenarios:
            tr = merge([per_scenario[sc][b.dataset_id] for b in members])
            acc = evaluate(classifier, tr, test, seed, cfg)
            report.rows.append(EvalRow(data_name, level, sc, classifier,
                                       min(tr.counts().values()),
                                       0 if sc == "original" else synth_count, 0, acc, seed))

    level_rows("L1", "+".join(types), list(bundles), lambda b: b.traffic_type)
    for tt in types:
        members = [b for b in bundles if b.traffic_type == tt and b.platform is not None]
        if len({b.platform for b in members}) >= 2:
            level_rows("L2", tt, members, lambda b: b.platform)
    for b in bundles:
        report.extend(evaluate_scenarios(b.dataset_id, "L3", b.train, b.test, b.pool, synth_count,
                                         classifier, seed, scenarios, cfg=cfg))
    return report


# ---------------------------------------------------------------------------
# limited original data


def limited_data_sweep(bundle: DatasetBundle, train_sizes: Sequence[int], synth_count: int,
                       synthesizer: Synthesizer, seed: int, classifier: str = "conv2d",
                       cfg: ClassifierConfig | None = None) -> EvalReport:
    """Retrain the generator on s originals per class for each s, then evaluate all scenarios."""
    available = min(bundle.train.counts().values())
    report = EvalReport()
    for s in train_sizes:
        if s < 1:
            raise ValueError("train size must be >= 1")
        if s > available:
            raise ValueError(f"train size {s} exceeds the {available} originals per class")
        sub = bundle.train.first_per_class(s)
        pool = synthesizer(sub, synth_count, seed + s)
        report.extend(evaluate_scenarios(bundle.dataset_id, "L3", sub, bundle.test, pool,
                                         synth_count, classifier, seed, cfg=cfg, train_size=s))
    return report


# ---------------------------------------------------------------------------
# cropping for near-real-time and truncated-anomaly variants


def prefix_length(seconds: float, bin_width: float) -> int:
    return int(round(seconds / bin_width))


def crop_image_set(images: ImageSet, m: int, n: int, enhance: EnhanceConfig) -> ImageSet:
    """Images of the first m of n samples at the training resolution.

    With traces available the prefix GASF is rebuilt exactly (the top-left
    block of the full GASF) and re-enhanced. Synthetic images without traces
    only exist at the training resolution, so their top-left block covering
    the same fraction of the trace is cut out and area-resized back.
    """
    if not 1 <= m <= n:
        raise ValueError(f"prefix {m} outside [1, {n}]")
    if m == n:
        return images
    if images.traces is not None:
        prefix = images.traces[:, :m]
        out = enhance_batch(gasf_encode_batch(prefix), enhance)
        return ImageSet(out, images.labels, images.ids, prefix, images.synthetic)
    r = images.images.shape[-1]
    k = max(1, int(round(r * m / n)))
    out = np.stack([resize_area(im[:k, :k], r, r) for im in images.images]).astype(np.float32)
    return ImageSet(out, images.labels, images.ids, None, images.synthetic)


def realtime_eval(bundle: DatasetBundle, prefixes: Sequence[float], synth_count: int, seed: int,
                  enhance: EnhanceConfig = EnhanceConfig(), classifier: str = "conv2d",
                  scenarios: Sequence[str] = SCENARIOS,
                  cfg: ClassifierConfig | None = None) -> EvalReport:
    """L3 accuracy per trace prefix; ints are sample counts, floats in (0, 1] fractions."""
    n = bundle.trace_length
    report = EvalReport()
    for p in prefixes:
        m = int(round(p * n)) if isinstance(p, float) else int(p)
        if m > n or m < 1:
            raise ValueError(f"prefix {p} invalid for trace length {n}")
        tr = crop_image_set(bundle.train, m, n, enhance)
        te = crop_image_set(bundle.test, m, n, enhance)
        pool = None if bundle.pool is None else crop_image_set(bundle.pool, m, n, enhance)
        report.extend(evaluate_scenarios(bundle.dataset_id, "L3", tr, te, pool, synth_count,
                                         classifier, seed, scenarios, crop_length=m, cfg=cfg))
    return report


# ---------------------------------------------------------------------------
# anomaly detection


@dataclass
class AnomalySetup:
    anomaly_classes: tuple[int, ...]
    legitimate_classes: tuple[int, ...]
    anomaly_train_count: int = 5
    crop_length: int | None = None

    def __post_init__(self):
        self.anomaly_classes = tuple(self.anomaly_classes)
        self.legitimate_classes = tuple(self.legitimate_classes)
        if set(self.anomaly_classes) & set(self.legitimate_classes):
            raise ValueError("anomaly and legitimate classes overlap")
        if self.anomaly_train_count < 1:
            raise ValueError("anomaly classes need at least one training trace")


def _restricted(bundle: DatasetBundle, setup: AnomalySetup) -> tuple[ImageSet, ImageSet]:
    keep = set(setup.anomaly_classes) | set(setup.legitimate_classes)
    train = bundle.train.where(np.isin(bundle.train.labels, list(keep)))
    idx = []
    for c in train.classes:
        ci = np.flatnonzero(train.labels == c)
        idx.extend(ci[:setup.anomaly_train_count] if c in setup.anomaly_classes else ci)
    test = bundle.test.where(np.isin(bundle.test.labels, list(keep)))
    return train.take(sorted(idx)), test


def anomaly_case1(bundle: DatasetBundle, setup: AnomalySetup, scenario: str, seed: int,
                  synthesizer: Synthesizer | None = None, synth_count: int = 0,
                  enhance: EnhanceConfig = EnhanceConfig(), classifier: str = "conv2d",
                  cfg: ClassifierConfig | None = None) -> float:
    """Accuracy on anomaly-class test traces of a classifier over all listed classes.

    Anomaly classes keep only their first ``anomaly_train_count`` training
    traces; the synthetic pool is generated from that restricted set.
    """
    train, test = _restricted(bundle, setup)
    pool = None
    if scenario != "original":
        if synthesizer is None:
            raise ValueError(f"scenario {scenario!r} needs a synthesizer")
        pool = synthesizer(train, synth_count, seed)
    if setup.crop_length is not None:
        n = bundle.trace_length
        train = crop_image_set(train, setup.crop_length, n, enhance)
        test = crop_image_set(test, setup.crop_length, n, enhance)
        pool = None if pool is None else crop_image_set(pool, setup.crop_length, n, enhance)
    tr = build_training_set(scenario, train, pool, synth_count, seed)
    check_test_purity(tr, test)
    anomalous = test.where(np.isin(test.labels, list(setup.anomaly_classes)))
    clf = make_classifier(classifier, seed, cfg).fit(tr.images, tr.labels)
    return 100.0 * float(np.mean(clf.predict(anomalous.images) == anomalous.labels))


@dataclass
class UncertaintyReport:
    legitimate: np.ndarray
    anomaly: np.ndarray
    ensemble_size: int
    num_classes: int

    @property
    def mean_legitimate(self) -> float:
        return float(np.mean(self.legitimate))

    @property
    def mean_anomaly(self) -> float:
        return float(np.mean(self.anomaly))

    @property
    def gap(self) -> float:
        return self.mean_anomaly - self.mean_legitimate


def ensemble_probabilities(train: ImageSet, x: np.ndarray, M: int, seed: int,
                           classifier: str = "conv2d", cfg: ClassifierConfig | None = None) -> np.ndarray:
    probs = [make_classifier(classifier, seed + 1000 * i, cfg).fit(train.images, train.labels)
             .predict_proba(x) for i in range(M)]
    return np.mean(probs, axis=0)


def anomaly_case2_uncertainty(bundle: DatasetBundle, setup: AnomalySetup, M: int, seed: int,
                              scenario: str = "original", synthesizer: Synthesizer | None = None,
                              synth_count: int = 0, classifier: str = "conv2d",
                              cfg: ClassifierConfig | None = None) -> UncertaintyReport:
    """Deep-ensemble predictive entropy for legitimate vs never-seen anomaly traces."""
    if M < 2:
        raise ValueError("ensemble size must be >= 2")
    legit = set(setup.legitimate_classes)
    train = bundle.train.where(np.isin(bundle.train.labels, list(legit)))
    pool = None
    if scenario != "original":
        if synthesizer is None:
            raise ValueError(f"scenario {scenario!r} needs a synthesizer")
        pool = synthesizer(train, synth_count, seed)
    tr = build_training_set(scenario, train, pool, synth_count, seed)
    test = bundle.test.where(np.isin(bundle.test.labels, list(legit | set(setup.anomaly_classes))))
    check_test_purity(tr, test)
    p = ensemble_probabilities(tr, test.images, M, seed, classifier, cfg)
    h = predictive_entropy(p)
    is_anom = np.isin(test.labels, list(setup.anomaly_classes))
    return UncertaintyReport(h[~is_anom], h[is_anom], M, p.shape[1])


# ---------------------------------------------------------------------------
# 1D vs 2D


def compare_1d_2d(bundle: DatasetBundle, seed: int, synth_2d: Synthesizer,
                  synth_1d: Synthesizer | None, synth_count: int,
                  fractions: Sequence[float] = (0.8, 0.4, 0.2), classifier: str = "conv2d",
                  cfg: ClassifierConfig | None = None) -> EvalReport:
    """Original 1D-vs-GASF classification at several training fractions, then
    1D-DM vs 2D-DM synthetic data under synth and ori+synth."""
    if synth_1d is None:
        raise ValueError("compare_1d_2d needs a 1D diffusion synthesizer")
    report = EvalReport()
    total = {c: k + bundle.test.counts()[c] for c, k in bundle.train.counts().items()}
    for f in fractions:
        k = int(np.floor(f * min(total.values())))
        sub = bundle.train.first_per_class(k)
        for variant, kind, traces in (("1d", "conv1d", True), ("2d", "conv2d", False)):
            acc = evaluate(kind, sub, bundle.test, seed, cfg, use_traces=traces)
            report.rows.append(EvalRow(bundle.dataset_id, "L3", "original", kind, k, 0, 0, acc,
                                       seed, variant, f))
    pools = {"2d-dm": synth_2d(bundle.train, synth_count, seed),
             "1d-dm": synth_1d(bundle.train, synth_count, seed)}
    report.extend(evaluate_scenarios(bundle.dataset_id, "L3", bundle.train, bundle.test, None, 0,
                                     classifier, seed, ("original",), cfg=cfg))
    for variant in ("1d-dm", "2d-dm"):
        report.extend(evaluate_scenarios(bundle.dataset_id, "L3", bundle.train, bundle.test,
                                         pools[variant], synth_count, classifier, seed,
                                         ("synth", "ori+synth"), cfg=cfg, variant=variant))
    return report


# ---------------------------------------------------------------------------
# synthetic-count sweep


def synth_count_sweep(bundle: DatasetBundle, counts: Sequence[int], seed: int,
                      classifier: str = "conv2d", cfg: ClassifierConfig | None = None) -> EvalReport:
    """original, synth@c for each c (nested draws from one pool), then ori+synth at max(c)."""
    if bundle.pool is None:
        raise ValueError("synth_count_sweep needs a synthetic pool")
    report = EvalReport()
    args = (bundle.dataset_id, "L3", bundle.train, bundle.test, bundle.pool)
    report.extend(evaluate_scenarios(*args, 0, classifier, seed, ("original",), cfg=cfg))
    for c in counts:
        report.extend(evaluate_scenarios(*args, c, classifier, seed, ("synth",), cfg=cfg))
    report.extend(evaluate_scenarios(*args, max(counts), classifier, seed, ("ori+synth",), cfg=cfg))
    return report
