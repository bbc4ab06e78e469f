"""Synthetic pools for the protocols: callables (train_set, count, seed) -> ImageSet."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..diffusion import DiffusionConfig, sample_array, train
from ..enhance import EnhanceConfig, enhance_batch
from ..gasf import gasf_encode_batch
from .data import ImageSet


def _synthetic_set(images, labels, tag: str, traces=None) -> ImageSet:
    ids = [f"synth-{tag}-c{int(c)}-{i:05d}" for i, c in enumerate(labels)]
    return ImageSet(np.asarray(images, dtype=np.float32), np.asarray(labels), ids, traces, synthetic=True)


@dataclass
class DiffusionSynthesizer:
    """Train a DM on the given originals and sample ``count`` items per class.

    dims=2 trains on the enhanced GASF images. dims=1 trains on the normalized
    traces and converts each sampled trace to an enhanced GASF image.
    """

    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    dims: int = 2
    tag: str = "dm"

    def __call__(self, train_set: ImageSet, count: int, seed: int) -> ImageSet:
        if self.dims == 2:
            data = train_set.images
        else:
            if train_set.traces is None:
                raise ValueError("1D diffusion needs the original traces")
            data = train_set.traces
        model = train(data, train_set.labels, self.diffusion, seed=seed, dims=self.dims,
                      dataset_id=self.tag)
        classes = train_set.classes
        arrays = [sample_array(model, c, count, seed + 7 * (c + 1))[:, 0] for c in classes]
        labels = np.repeat(classes, count)
        if not arrays:
            raise ValueError("no classes to sample")
        out = np.concatenate(arrays)
        if self.dims == 2:
            return _synthetic_set(out, labels, self.tag)
        traces = out.astype(np.float64)
        images = enhance_batch(gasf_encode_batch(traces), self.enhance)
        return _synthetic_set(images, labels, self.tag, traces)


@dataclass
class ImportedSynthesizer:
    """Externally generated 1D traces (e.g. from a GAN baseline) as a fixed pool."""

    traces: np.ndarray
    labels: np.ndarray
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    tag: str = "imported"

    def __call__(self, train_set: ImageSet, count: int, seed: int) -> ImageSet:
        images = enhance_batch(gasf_encode_batch(self.traces), self.enhance)
        pool = _synthetic_set(images, self.labels, self.tag, self.traces)
        return pool.where(np.isin(pool.labels, train_set.classes))
