"""Contrast enhancement and resizing of GASF images."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .gasf import GasfImage


@dataclass
class PixelImage:
    pixels: np.ndarray
    stage: str  # "u8" or "unit"
    dataset_id: str = ""
    class_label: int = -1
    n: int = 0

    def __post_init__(self):
        if self.stage not in ("u8", "unit"):
            raise ValueError(f"unknown pixel stage {self.stage!r}")


@dataclass(frozen=True)
class EnhanceConfig:
    resolution: int = 64
    gamma: float = 0.25
    A: float = 1.0


def quantize_u8(image: GasfImage | np.ndarray) -> PixelImage:
    m = image.matrix if isinstance(image, GasfImage) else np.asarray(image, dtype=np.float64)
    scaled = (m + 1.0) / 2.0 * 255.0
    # round half away from zero; scaled is non-negative once clamped
    px = np.floor(np.clip(scaled, 0.0, 255.0) + 0.5)
    px = np.clip(px, 0, 255).astype(np.uint8)
    if isinstance(image, GasfImage):
        return PixelImage(px, "u8", image.dataset_id, image.class_label, image.n)
    return PixelImage(px, "u8", n=m.shape[0])


def normalize_unit(image: PixelImage) -> PixelImage:
    if image.stage != "u8":
        raise ValueError("normalize_unit expects a u8 image")
    return PixelImage(image.pixels.astype(np.float64) / 255.0, "unit",
                      image.dataset_id, image.class_label, image.n)


def gamma_correct(image: PixelImage, gamma: float = 0.25, A: float = 1.0) -> PixelImage:
    """p -> A * p**gamma, clamped to [0, 1]."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if image.stage != "unit":
        raise ValueError("gamma_correct expects a unit-range image")
    out = np.clip(A * np.power(image.pixels, gamma), 0.0, 1.0)
    return PixelImage(out, "unit", image.dataset_id, image.class_label, image.n)


@lru_cache(maxsize=64)
def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix; row k averages source cells over [k*s, (k+1)*s)."""
    s = n_in / n_out
    edges = np.arange(n_out + 1) * s
    lo, hi = edges[:-1, None], edges[1:, None]
    cells = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    w = overlap / overlap.sum(axis=1, keepdims=True)
    w.setflags(write=False)
    return w


def resize_area(image: PixelImage | np.ndarray, out_h: int, out_w: int):
    """Area-weighted resampling; each output cell is the mean of the source area it covers.

    For integer downscale factors this is the plain block mean. Accepts a bare
    2D array (returned as an array) or a PixelImage (returned as a PixelImage
    with float pixels; u8 inputs are re-rounded to u8).
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be >= 1")
    px = image.pixels if isinstance(image, PixelImage) else image
    px = np.asarray(px, dtype=np.float64)
    h, w = px.shape
    if (h, w) == (out_h, out_w):
        out = px.copy()
    else:
        out = _area_weights(h, out_h) @ px @ _area_weights(w, out_w).T
    if not isinstance(image, PixelImage):
        return out
    if image.stage == "u8":
        out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return PixelImage(out, image.stage, image.dataset_id, image.class_label, image.n)


def enhance_pipeline(image: GasfImage, cfg: EnhanceConfig = EnhanceConfig()) -> PixelImage:
    """quantize -> /255 -> gamma -> area resize to cfg.resolution."""
    img = quantize_u8(image)
    img = normalize_unit(img)
    img = gamma_correct(img, cfg.gamma, cfg.A)
    return resize_area(img, cfg.resolution, cfg.resolution)


def enhance_batch(matrices: np.ndarray, cfg: EnhanceConfig = EnhanceConfig()) -> np.ndarray:
    """Vectorized enhance_pipeline over a (N, n, n) GASF stack; returns float32 (N, r, r).

    Input is rounded to float32 first so in-memory GASF and the float32
    ``.bin`` files give bit-identical images.
    """
    m = np.asarray(matrices, dtype=np.float32).astype(np.float64)
    px = np.floor(np.clip((m + 1.0) / 2.0 * 255.0, 0.0, 255.0) + 0.5) / 255.0
    px = np.clip(cfg.A * np.power(px, cfg.gamma), 0.0, 1.0)
    n = m.shape[-1]
    r = cfg.resolution
    if n != r:
        wh = _area_weights(n, r)
        px = np.einsum("ij,njk,lk->nil", wh, px, wh, optimize=True)
    return px.astype(np.float32)


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    """Write a unit-range or u8 grayscale array as an 8-bit PNG."""
    from PIL import Image

    px = np.asarray(pixels)
    if px.dtype != np.uint8:
        px = np.clip(np.floor(px * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(px, mode="L").save(path, format="PNG")
