"""FID and histogram-overlap scoring of synthetic vs original image sets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from torch import nn

from .enhance import PixelImage, resize_area

EIG_CLAMP_REL = 1e-10


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


@dataclass
class FidReport:
    per_class: dict[int, float]
    embedder_id: str
    dataset_id: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_class.values())))

    @property
    def std(self) -> float:
        # population std over classes
        return float(np.std(list(self.per_class.values())))

    def rows(self) -> list[dict]:
        out = [{"dataset": self.dataset_id, "class": c, "fid": v} for c, v in self.per_class.items()]
        out.append({"dataset": self.dataset_id, "class": "mean", "fid": self.mean})
        out.append({"dataset": self.dataset_id, "class": "std", "fid": self.std})
        return out


def _as_array(images) -> np.ndarray:
    if isinstance(images, np.ndarray):
        return images.astype(np.float64, copy=False)
    return np.stack([im.pixels if isinstance(im, PixelImage) else np.asarray(im) for im in images]
                    ).astype(np.float64)


class _FrozenConvNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(1, 32, 3, padding=1), nn.ReLU(), nn.AvgPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(), nn.AvgPool2d(2),
            nn.Conv2d(64, 128, 3, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
        )

    def forward(self, x):
        return self.body(x).flatten(1)


@lru_cache(maxsize=1)
def _convnet() -> _FrozenConvNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(20231)
        net = _FrozenConvNet().double().eval()
    return net.requires_grad_(False)


def embed_images(images, embedder_id: str = "pixel") -> np.ndarray:
    """(N, d) embeddings: ``pixel`` is an 8x8 area resize (d=64), ``convnet`` a frozen random CNN (d=128)."""
    x = _as_array(images)
    if embedder_id == "pixel":
        return np.stack([resize_area(im, 8, 8).ravel() for im in x]) if len(x) else np.zeros((0, 64))
    if embedder_id == "convnet":
        with torch.no_grad():
            return _convnet()(torch.from_numpy(x[:, None])).numpy()
    raise ValueError(f"unknown embedder {embedder_id!r}")


def gaussian_stats(vectors) -> GaussianStats:
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] < 2:
        raise ValueError("need at least 2 vectors for covariance")
    mu = v.mean(axis=0)
    d = v - mu
    cov = d.T @ d / (v.shape[0] - 1)
    return GaussianStats(mu, (cov + cov.T) / 2, v.shape[0])


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh((m + m.T) / 2)
    w = np.clip(w, 0.0, None)
    return (q * np.sqrt(w)) @ q.T


def trace_sqrt_product(a: np.ndarray, b: np.ndarray) -> float:
    """Tr((A B)^{1/2}) via the symmetric form A^{1/2} B A^{1/2}."""
    sa = _psd_sqrt(a)
    m = sa @ b @ sa
    w = np.linalg.eigvalsh((m + m.T) / 2)
    top = float(np.abs(w).max()) if w.size else 0.0
    tol = EIG_CLAMP_REL * top
    if np.any(w < -tol):
        raise np.linalg.LinAlgError(
            f"matrix square root failed: eigenvalue {w.min():.3e} (max {top:.3e})")
    w = np.where(w < tol, 0.0, w)
    return float(np.sqrt(w).sum())


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    diff = a.mean - b.mean
    tr = np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt_product(a.cov, b.cov)
    return float(diff @ diff + tr)


def fid(images_a, images_b, embedder_id: str = "pixel") -> float:
    return frechet_distance(gaussian_stats(embed_images(images_a, embedder_id)),
                            gaussian_stats(embed_images(images_b, embedder_id)))


def fid_per_class(original: Mapping[int, np.ndarray], synthetic: Mapping[int, np.ndarray],
                  n: int | None, embedder_id: str = "pixel", seed: int = 0,
                  dataset_id: str = "") -> FidReport:
    """Per class: n seeded synthetic picks against all of that class's originals."""
    missing = set(original) ^ set(synthetic)
    if missing:
        raise ValueError(f"class(es) {sorted(missing)} missing from one of the sets")
    rng = np.random.default_rng(seed)
    per_class = {}
    for c in sorted(original):
        syn = _as_array(synthetic[c])
        k = len(syn) if n is None else n
        if len(syn) < k:
            raise ValueError(f"class {c}: {len(syn)} synthetic images < n={k}")
        pick = np.sort(rng.choice(len(syn), size=k, replace=False))
        per_class[int(c)] = fid(original[c], syn[pick], embedder_id)
    return FidReport(per_class, embedder_id, dataset_id)


def group_by_class(images: np.ndarray, labels) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    return {int(c): images[labels == c] for c in np.unique(labels)}


def pixel_histogram(images, bins: int = 32) -> np.ndarray:
    x = _as_array(images).ravel()
    h, _ = np.histogram(x, bins=bins, range=(0.0, 1.0))
    return h / h.sum()


def histogram_compare(original, synthetic, bins: int = 32) -> float:
    """Histogram intersection of pooled pixel values over [0, 1]."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if len(original) == 0 or len(synthetic) == 0:
        raise ValueError("histogram_compare needs non-empty sets")
    return float(np.minimum(pixel_histogram(original, bins), pixel_histogram(synthetic, bins)).sum())


def write_fid_csv(path: str | Path, reports: list[FidReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["dataset", "class", "fid"])
        w.writeheader()
        for r in reports:
            w.writerows(r.rows())
