"""DDPM training and ancestral sampling around the U-Net denoiser."""

from __future__ import annotations

import copy
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..enhance import PixelImage
from .schedule import NoiseSchedule, forward_diffuse, make_schedule
from .unet import DenoiserSpec, UNet

log = logging.getLogger(__name__)


@dataclass
class DiffusionConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-4
    ema_decay: float = 0.999
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2, 4, 4)
    conditioning: str = "class"  # "class", "per_class" or "none"
    grad_clip: float = 1.0
    sample_batch: int = 64
    checkpoint_every: int = 0
    clip_denoised: bool = True

    def __post_init__(self):
        self.channel_mults = tuple(self.channel_mults)
        if self.conditioning not in ("class", "per_class", "none"):
            raise ValueError(f"unknown conditioning mode {self.conditioning!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        return d


def _generator(rng) -> torch.Generator:
    if isinstance(rng, torch.Generator):
        return rng
    g = torch.Generator()
    g.manual_seed(int(rng))
    return g


class DiffusionModel:
    """Denoiser + schedule + EMA copy + optimizer state."""

    def __init__(self, denoiser: torch.nn.Module, schedule: NoiseSchedule, *,
                 class_set: Sequence[int] = (), sample_shape: tuple[int, ...] = (),
                 spec: DenoiserSpec | None = None, config: DiffusionConfig | None = None,
                 trained_on: str = "", seed: int = 0):
        self.denoiser = denoiser
        self.schedule = schedule
        self.class_set = sorted(int(c) for c in class_set)
        self.sample_shape = tuple(sample_shape)
        self.spec = spec
        self.config = config or DiffusionConfig()
        self.trained_on = trained_on
        self.seed = seed
        self.loss_curve: list[float] = []
        self.step = 0
        params = [p for p in denoiser.parameters() if p.requires_grad]
        self.optimizer = torch.optim.Adam(params, lr=self.config.lr) if params else None
        self.ema = copy.deepcopy(denoiser).requires_grad_(False) if params else denoiser
        self._label_index = {c: i for i, c in enumerate(self.class_set)}

    @property
    def conditional(self) -> bool:
        return getattr(self.spec, "num_classes", None) is not None

    def label_tensor(self, labels) -> torch.Tensor | None:
        if not self.conditional:
            return None
        try:
            idx = [self._label_index[int(c)] for c in labels]
        except KeyError as exc:
            raise ValueError(f"unknown class label {exc.args[0]}") from None
        return torch.tensor(idx, dtype=torch.long)

    @torch.no_grad()
    def update_ema(self):
        if self.ema is self.denoiser:
            return
        decay = min(self.config.ema_decay, (1 + self.step) / (10 + self.step))
        for pe, p in zip(self.ema.parameters(), self.denoiser.parameters()):
            pe.mul_(decay).add_(p.detach(), alpha=1 - decay)
        for be, b in zip(self.ema.buffers(), self.denoiser.buffers()):
            be.copy_(b)


def build_model(cfg: DiffusionConfig, sample_shape: tuple[int, ...], class_set: Sequence[int],
                seed: int, dims: int = 2, dataset_id: str = "") -> DiffusionModel:
    conditional = cfg.conditioning == "class"
    spec = DenoiserSpec(dims=dims, in_channels=sample_shape[0], base_channels=cfg.base_channels,
                        channel_mults=cfg.channel_mults,
                        num_classes=len(class_set) if conditional else None)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = UNet(spec)
    return DiffusionModel(net, make_schedule(cfg.T, cfg.beta_start, cfg.beta_end),
                          class_set=class_set, sample_shape=sample_shape, spec=spec,
                          config=cfg, trained_on=dataset_id, seed=seed)


def denoising_loss(denoiser, x0, t, eps, schedule: NoiseSchedule, y=None) -> torch.Tensor:
    """MSE between predicted and true noise for explicit (t, eps)."""
    xt = forward_diffuse(x0, t, eps, schedule)
    pred = denoiser(xt, t, y) if y is not None else denoiser(xt, t)
    return F.mse_loss(pred, eps)


def training_step(model: DiffusionModel, images, labels, rng) -> float:
    """One optimizer step on a batch of unit-range images; returns the loss."""
    g = _generator(rng)
    x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    if x.dim() == len(model.sample_shape):
        x = x.unsqueeze(1)
    x0 = x * 2.0 - 1.0
    t = torch.randint(1, model.schedule.T + 1, (x0.shape[0],), generator=g)
    eps = torch.randn(x0.shape, generator=g)
    y = model.label_tensor(labels)
    loss = denoising_loss(model.denoiser, x0, t, eps, model.schedule, y)
    if not torch.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss {loss.item()} at step {model.step}; "
            f"x0 range [{x0.min().item():.3g}, {x0.max().item():.3g}], t in [{t.min()}, {t.max()}]")
    if model.optimizer is not None:
        model.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if model.config.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.denoiser.parameters(), model.config.grad_clip)
        model.optimizer.step()
        model.update_ema()
    model.step += 1
    value = float(loss.item())
    model.loss_curve.append(value)
    return value


def _train_single(images: np.ndarray, labels: np.ndarray, cfg: DiffusionConfig, seed: int,
                  dims: int, dataset_id: str, checkpoint_dir=None, tag: str = "") -> DiffusionModel:
    x = np.asarray(images, dtype=np.float32)
    if x.ndim == dims + 1:
        x = x[:, None]
    model = build_model(cfg, x.shape[1:], np.unique(labels).tolist(), seed, dims, dataset_id)
    g = _generator(seed + 1)
    n = x.shape[0]
    bs = min(cfg.batch_size, n)
    order = torch.randperm(n, generator=g)
    pos = 0
    for step in range(cfg.steps):
        if pos + bs > n:
            order, pos = torch.randperm(n, generator=g), 0
        idx = order[pos:pos + bs].numpy()
        pos += bs
        loss = training_step(model, x[idx], labels[idx], g)
        if step % 100 == 0:
            log.debug("%s step %d loss %.4f", dataset_id or "dm", step, loss)
        if checkpoint_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model, Path(checkpoint_dir) / f"ckpt{tag}-{step + 1:06d}.pt")
    return model


class PerClassDiffusion:
    """One unconditional model per class, behind the DiffusionModel sampling surface."""

    def __init__(self, models: dict[int, DiffusionModel]):
        self.models = dict(sorted(models.items()))
        first = next(iter(self.models.values()))
        self.schedule = first.schedule
        self.sample_shape = first.sample_shape
        self.class_set = list(self.models)
        self.config = first.config
        self.loss_curve = [v for m in self.models.values() for v in m.loss_curve]


def train(images, labels, cfg: DiffusionConfig, seed: int = 0, *, dims: int = 2,
          dataset_id: str = "", checkpoint_dir=None):
    """Train on unit-range images (N, H, W) or traces (N, L) with integer labels."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.shape[0] == 0:
        raise ValueError("cannot train a diffusion model on an empty dataset")
    if labels.shape[0] != images.shape[0]:
        raise ValueError("images and labels differ in length")
    if cfg.conditioning != "per_class":
        return _train_single(images, labels, cfg, seed, dims, dataset_id, checkpoint_dir)
    models = {}
    for c in np.unique(labels):
        sel = labels == c
        sub = DiffusionConfig(**{**cfg.to_dict(), "conditioning": "none"})
        m = _train_single(images[sel], labels[sel], sub, seed + 7919 * int(c), dims,
                          dataset_id, checkpoint_dir, tag=f"-c{int(c)}")
        m.class_set = [int(c)]
        models[int(c)] = m
    return PerClassDiffusion(models)


@torch.no_grad()
def sample_array(model, class_label: int, count: int, rng) -> np.ndarray:
    """Ancestral sampling; returns (count, *sample_shape) float32 in [0, 1]."""
    if isinstance(model, PerClassDiffusion):
        if int(class_label) not in model.models:
            raise ValueError(f"unknown class label {class_label}")
        return sample_array(model.models[int(class_label)], class_label, count, rng)
    if model.class_set and int(class_label) not in model.class_set:
        raise ValueError(f"unknown class label {class_label}")
    if count == 0:
        return np.zeros((0, *model.sample_shape), dtype=np.float32)
    g = _generator(rng)
    net = model.ema
    net.eval()
    sch = model.schedule
    betas = torch.tensor(sch.betas, dtype=torch.float32)
    alphas = torch.tensor(sch.alphas, dtype=torch.float32)
    abar = torch.tensor(sch.alpha_bars, dtype=torch.float32)
    ab64 = sch.alpha_bars
    ab_prev = np.concatenate([[1.0], ab64[:-1]])
    post_x0 = torch.tensor(np.sqrt(ab_prev) * sch.betas / (1.0 - ab64), dtype=torch.float32)
    post_xt = torch.tensor(np.sqrt(sch.alphas) * (1.0 - ab_prev) / (1.0 - ab64), dtype=torch.float32)
    out = []
    bsz = max(1, model.config.sample_batch)
    for start in range(0, count, bsz):
        b = min(bsz, count - start)
        y = model.label_tensor([class_label] * b)
        x = torch.randn((b, *model.sample_shape), generator=g)
        for t in range(sch.T, 0, -1):
            tt = torch.full((b,), t, dtype=torch.long)
            eps_hat = net(x, tt, y) if y is not None else net(x, tt)
            if model.config.clip_denoised:
                # posterior mean around a clipped x0 estimate
                x0 = ((x - torch.sqrt(1.0 - abar[t - 1]) * eps_hat) / torch.sqrt(abar[t - 1])).clamp(-1.0, 1.0)
                x = post_x0[t - 1] * x0 + post_xt[t - 1] * x
            else:
                coef = betas[t - 1] / torch.sqrt(1.0 - abar[t - 1])
                x = (x - coef * eps_hat) / torch.sqrt(alphas[t - 1])
            if t > 1:
                x = x + torch.sqrt(betas[t - 1]) * torch.randn(x.shape, generator=g)
        out.append(((x.clamp(-1.0, 1.0) + 1.0) / 2.0).numpy())
    net.train()
    return np.concatenate(out).astype(np.float32)


def sample(model, class_label: int, count: int, rng, dataset_id: str = "") -> list[PixelImage]:
    arr = sample_array(model, class_label, count, rng)
    return [PixelImage(a[0], "unit", dataset_id, int(class_label), 0) for a in arr]


# ---------------------------------------------------------------------------
# checkpoints


def _payload(model: DiffusionModel) -> dict:
    return {
        "schedule": model.schedule.to_dict(),
        "spec": model.spec.to_dict() if model.spec else None,
        "config": model.config.to_dict(),
        "class_set": model.class_set,
        "sample_shape": list(model.sample_shape),
        "trained_on": model.trained_on,
        "seed": model.seed,
        "step": model.step,
        "loss_curve": list(model.loss_curve),
        "denoiser": model.denoiser.state_dict(),
        "ema": model.ema.state_dict(),
    }


def save_checkpoint(model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(model, PerClassDiffusion):
        payload = {"per_class": {c: _payload(m) for c, m in model.models.items()}}
    else:
        payload = _payload(model)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        torch.save(payload, fh)
    os.replace(tmp, path)
    return path


def _restore(p: dict) -> DiffusionModel:
    cfg = DiffusionConfig(**p["config"])
    spec = DenoiserSpec(**p["spec"])
    net = UNet(spec)
    net.load_state_dict(p["denoiser"])
    model = DiffusionModel(net, NoiseSchedule(np.array(p["schedule"]["betas"])),
                           class_set=p["class_set"], sample_shape=tuple(p["sample_shape"]),
                           spec=spec, config=cfg, trained_on=p["trained_on"], seed=p["seed"])
    model.ema.load_state_dict(p["ema"])
    model.step = p["step"]
    model.loss_curve = list(p["loss_curve"])
    return model


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if "per_class" in payload:
        return PerClassDiffusion({int(c): _restore(p) for c, p in payload["per_class"].items()})
    return _restore(payload)
