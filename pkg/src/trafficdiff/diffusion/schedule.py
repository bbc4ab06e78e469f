from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("betas must be a non-empty 1D sequence")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", b)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def alpha_bar(self, t):
        """alpha_bar at 1-based step(s) t."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"step outside [1, {self.T}]")
        return self.alpha_bars[t - 1]

    def to_dict(self) -> dict:
        return {"betas": self.betas.tolist()}


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; T=1 uses beta_start alone."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def diffuse_with(x0, eps, alpha_bar):
    """sqrt(ab) * x0 + sqrt(1 - ab) * eps; ab is a scalar or one value per batch item."""
    if isinstance(x0, torch.Tensor):
        ab = torch.as_tensor(alpha_bar, dtype=x0.dtype, device=x0.device)
        if ab.dim() == 1:
            ab = ab.view(-1, *([1] * (x0.dim() - 1)))
        return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
    ab = np.asarray(alpha_bar, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if ab.ndim == 1:
        ab = ab.reshape(-1, *([1] * (x0.ndim - 1)))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(eps)


def forward_diffuse(x0, t, eps, schedule: NoiseSchedule):
    """Closed-form q(x_t | x_0) draw for 1-based step(s) t; x0 already in [-1, 1]."""
    if isinstance(t, torch.Tensor):
        t = t.cpu().numpy()
    return diffuse_with(x0, eps, schedule.alpha_bar(t))
