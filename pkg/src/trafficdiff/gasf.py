"""Gramian Angular Summation Field encoding of normalized traces.

The encoder works on the product form ``x_i x_j - sqrt(1-x_i^2) sqrt(1-x_j^2)``
which equals ``cos(arccos x_i + arccos x_j)`` but avoids the arccos round trip
near 0 and 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .traces import NormalizedTrace

DOMAIN_TOL = 1e-12


@dataclass
class PolarTrace:
    angles: np.ndarray
    radii: np.ndarray


@dataclass
class GasfImage:
    matrix: np.ndarray
    class_label: int = -1
    dataset_id: str = ""

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _samples(trace) -> np.ndarray:
    x = trace.samples if isinstance(trace, NormalizedTrace) else trace
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("expected a non-empty 1D trace")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("GASF domain error: samples must lie in [0, 1]")
    return x


def to_polar(trace, timestamps: Sequence[float] | None = None, scale: float | None = None) -> PolarTrace:
    """Angles arccos(x_i) and radii t_i / C; C defaults to the trace length."""
    x = _samples(trace)
    t = np.arange(x.size, dtype=np.float64) if timestamps is None else np.asarray(timestamps, float)
    c = float(x.size) if scale is None else float(scale)
    if c <= 0:
        raise ValueError("radius scale must be positive")
    return PolarTrace(angles=np.arccos(x), radii=t / c)


def gasf_encode(trace) -> GasfImage:
    x = _samples(trace)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    matrix = np.outer(x, x) - np.outer(s, s)
    if isinstance(trace, NormalizedTrace):
        return GasfImage(matrix, trace.class_label, trace.dataset_id)
    return GasfImage(matrix)


def gasf_encode_batch(samples: np.ndarray) -> np.ndarray:
    """Encode a stack of traces shaped (N, n) into (N, n, n)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("GASF domain error: samples must lie in [0, 1]")
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    return x[:, :, None] * x[:, None, :] - s[:, :, None] * s[:, None, :]


def gasf_decode(image: GasfImage | np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Recover samples from the main diagonal: x = sqrt((y + 1) / 2)."""
    m = image.matrix if isinstance(image, GasfImage) else np.asarray(image, dtype=np.float64)
    y = np.diag(m).astype(np.float64)
    if y.min() < -1.0 - tol or y.max() > 1.0 + tol:
        raise ValueError("GASF diagonal outside [-1, 1]")
    return np.sqrt(np.clip((y + 1.0) / 2.0, 0.0, 1.0))


def crop_prefix(image: GasfImage, m: int) -> GasfImage:
    """Top-left m x m block, i.e. the image of the first m samples."""
    n = image.n
    if not 1 <= m <= n:
        raise ValueError(f"crop length {m} outside [1, {n}]")
    return GasfImage(image.matrix[:m, :m].copy(), image.class_label, image.dataset_id)


# ---------------------------------------------------------------------------
# raw float32 container: per record a header (n, class_label, id) then n*n
# little-endian float32 values in row-major order.

_MAGIC = b"GASF"
_HEAD = struct.Struct("<4sIiH")


def write_gasf_file(path: str | Path, images: Iterable[GasfImage]) -> int:
    count = 0
    with open(path, "wb") as fh:
        for img in images:
            ident = img.dataset_id.encode("utf-8")
            fh.write(_HEAD.pack(_MAGIC, img.n, int(img.class_label), len(ident)))
            fh.write(ident)
            fh.write(np.ascontiguousarray(img.matrix, dtype="<f4").tobytes())
            count += 1
    return count


def read_gasf_file(path: str | Path) -> list[GasfImage]:
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        magic, n, label, idlen = _HEAD.unpack_from(data, pos)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad record magic at byte {pos}")
        pos += _HEAD.size
        ident = data[pos:pos + idlen].decode("utf-8")
        pos += idlen
        nbytes = 4 * n * n
        mat = np.frombuffer(data[pos:pos + nbytes], dtype="<f4").reshape(n, n)
        pos += nbytes
        out.append(GasfImage(mat.astype(np.float64), label, ident))
    return out
