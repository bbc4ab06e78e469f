from functools import lru_cache

import numpy as np
import pytest

from trafficdiff.enhance import EnhanceConfig
from trafficdiff.experiments import prepare_images
from trafficdiff.harness import DatasetBundle, ImageSet
from trafficdiff.traces import DatasetSpec, SplitSpec


@lru_cache(maxsize=None)
def _toy(dataset_id, num_classes, per_class, length, resolution, seed, anomaly, bin_width):
    spec = DatasetSpec(dataset_id, length, num_classes, per_class, bin_width=bin_width,
                       anomaly_classes=anomaly)
    return prepare_images(spec, EnhanceConfig(resolution), seed, SplitSpec(0.8))


def toy_bundle(dataset_id="toy", num_classes=2, per_class=20, length=64, resolution=32, seed=0,
               anomaly=(), traffic_type=None, platform=None, bin_width=0.25) -> DatasetBundle:
    tr, te = _toy(dataset_id, num_classes, per_class, length, resolution, seed, tuple(anomaly),
                  bin_width)
    train = ImageSet(tr["images"], tr["labels"], [f"{dataset_id}:{i}" for i in tr["ids"]], tr["traces"])
    test = ImageSet(te["images"], te["labels"], [f"{dataset_id}:{i}" for i in te["ids"]], te["traces"])
    return DatasetBundle(dataset_id, train, test, None, traffic_type, platform)


class JitterSynth:
    """Stand-in generator: resampled originals plus small pixel noise. Records its inputs."""

    def __init__(self, noise=0.02, keep_traces=False):
        self.noise = noise
        self.keep_traces = keep_traces
        self.calls = []

    def __call__(self, train_set: ImageSet, count: int, seed: int) -> ImageSet:
        self.calls.append((train_set.counts(), count, seed))
        rng = np.random.default_rng(seed)
        idx = np.concatenate([rng.choice(np.flatnonzero(train_set.labels == c), count)
                              for c in train_set.classes])
        images = np.clip(train_set.images[idx] + rng.normal(0, self.noise, train_set.images[idx].shape),
                         0, 1).astype(np.float32)
        traces = train_set.traces[idx] if self.keep_traces and train_set.traces is not None else None
        ids = [f"synth-{k}" for k in range(len(idx))]
        return ImageSet(images, train_set.labels[idx], ids, traces, synthetic=True)


@pytest.fixture
def jitter():
    return JitterSynth()


# ---------------------------------------------------------------------------
# acceptance bookkeeping: one summary line per numbered criterion

_CRITERIA: dict[int, tuple[str, list[bool]]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            n, title = m.args
            _CRITERIA.setdefault(n, (title, []))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA[m.args[0]][1].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, results = _CRITERIA[n]
        if not results:
            state = "NOT RUN"
        else:
            state = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {state:7s} {title}")
