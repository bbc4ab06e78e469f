"""Scaled-down end-to-end run: toy traces -> GASF -> DM -> fidelity + classification."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .diffusion import DiffusionConfig, sample_array, train
from .enhance import EnhanceConfig, enhance_batch
from .fidelity import fid, fid_per_class, group_by_class, histogram_compare
from .gasf import gasf_encode_batch
from .harness.classifiers import ClassifierConfig, train_and_eval
from .traces import DatasetSpec, SplitSpec, gen_toy_dataset, preprocess, split_dataset

log = logging.getLogger(__name__)


@dataclass
class ToyRunConfig:
    dataset: DatasetSpec = field(default_factory=lambda: DatasetSpec(
        "toy-e2e", target_length=128, num_classes=2, traces_per_class=100, bin_width=0.25))
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    diffusion: DiffusionConfig = field(default_factory=lambda: DiffusionConfig(
        T=1000, steps=3000, batch_size=16, lr=5e-4, base_channels=8,
        channel_mults=(1, 2, 2, 4, 4), sample_batch=80))
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    synth_per_class: int = 80
    seed: int = 0


def prepare_images(spec: DatasetSpec, enhance: EnhanceConfig, seed: int, split=SplitSpec()):
    """Toy dataset -> (train, test) dicts with traces, images, labels."""
    traces = [preprocess(r, spec) for r in gen_toy_dataset(spec, seed)]
    parts = []
    for subset in split_dataset(traces, split):
        x = np.stack([t.samples for t in subset])
        parts.append({
            "traces": x,
            "images": enhance_batch(gasf_encode_batch(x), enhance),
            "labels": np.array([t.class_label for t in subset]),
            "ids": [t.trace_id for t in subset],
        })
    return parts[0], parts[1]


def run_toy_end_to_end(cfg: ToyRunConfig = ToyRunConfig()) -> dict:
    t0 = time.time()
    train_set, test_set = prepare_images(cfg.dataset, cfg.enhance, cfg.seed)
    model = train(train_set["images"], train_set["labels"], cfg.diffusion, seed=cfg.seed + 11,
                  dataset_id=cfg.dataset.dataset_id)
    t_train = time.time() - t0
    classes = sorted(np.unique(train_set["labels"]).tolist())
    synth = {c: sample_array(model, c, cfg.synth_per_class, cfg.seed + 100 + c)[:, 0] for c in classes}
    t_sample = time.time() - t0 - t_train

    orig = group_by_class(train_set["images"], train_set["labels"])
    fid_matrix = {(c, o): fid(synth[c], orig[o], "pixel") for c in classes for o in classes}
    report = fid_per_class(orig, synth, n=cfg.synth_per_class, seed=cfg.seed)

    sx = np.concatenate([synth[c] for c in classes])
    sy = np.concatenate([[c] * len(synth[c]) for c in classes])
    acc = {}
    acc["original"] = train_and_eval("conv2d", train_set["images"], train_set["labels"],
                                     test_set["images"], test_set["labels"], cfg.seed, cfg.classifier)
    acc["synth"] = train_and_eval("conv2d", sx, sy, test_set["images"], test_set["labels"],
                                  cfg.seed, cfg.classifier)
    acc["ori+synth"] = train_and_eval(
        "conv2d", np.concatenate([train_set["images"], sx]), np.concatenate([train_set["labels"], sy]),
        test_set["images"], test_set["labels"], cfg.seed, cfg.classifier)
    return {
        "fid_matrix": fid_matrix,
        "fid_report": report,
        "histogram_overlap": histogram_compare(train_set["images"], sx),
        "accuracy": acc,
        "loss_curve": list(model.loss_curve),
        "synthetic": synth,
        "train": train_set,
        "test": test_set,
        "timings": {"train_s": t_train, "sample_s": t_sample, "total_s": time.time() - t0},
    }
