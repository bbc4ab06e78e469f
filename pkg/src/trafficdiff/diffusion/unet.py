"""U-shaped epsilon-prediction denoiser, for images (dims=2) or traces (dims=1)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
import torch.nn.functional as F


@dataclass(frozen=True)
class DenoiserSpec:
    dims: int = 2
    in_channels: int = 1
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2, 4, 4)
    num_classes: int | None = None
    time_dim: int | None = None
    groups: int = 8

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise ValueError("dims must be 1 or 2")
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))

    @property
    def levels(self) -> int:
        return len(self.channel_mults)

    @property
    def size_multiple(self) -> int:
        """Inputs must be divisible by this along every spatial axis."""
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        return d


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = t.double()[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _norm(ch: int, groups: int) -> nn.GroupNorm:
    # at least two channels per group so a 1x1 feature map still has something to normalize
    g = math.gcd(ch, groups)
    while g > 1 and ch // g < 2:
        g = math.gcd(g // 2, ch)
    return nn.GroupNorm(g, ch)


class ResBlock(nn.Module):
    def __init__(self, conv, cin: int, cout: int, tdim: int, groups: int):
        super().__init__()
        self.norm1 = _norm(cin, groups)
        self.conv1 = conv(cin, cout, 3, padding=1)
        self.temb = nn.Linear(tdim, cout)
        self.norm2 = _norm(cout, groups)
        self.conv2 = conv(cout, cout, 3, padding=1)
        self.skip = conv(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        proj = self.temb(F.silu(emb))
        h = h + proj.view(proj.shape + (1,) * (h.dim() - 2))
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class UNet(nn.Module):
    """One residual block per level, strided-conv downsampling, nearest upsampling."""

    def __init__(self, spec: DenoiserSpec):
        super().__init__()
        self.spec = spec
        conv = nn.Conv2d if spec.dims == 2 else nn.Conv1d
        self._conv = conv
        base = spec.base_channels
        tdim = spec.time_dim or 4 * base
        chans = [base * m for m in spec.channel_mults]
        self.time_mlp = nn.Sequential(nn.Linear(base, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.class_emb = nn.Embedding(spec.num_classes, tdim) if spec.num_classes else None

        self.stem = conv(spec.in_channels, base, 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        cin = base
        for i, ch in enumerate(chans):
            self.down_blocks.append(ResBlock(conv, cin, ch, tdim, spec.groups))
            if i < len(chans) - 1:
                self.downsamples.append(conv(ch, ch, 3, stride=2, padding=1))
            cin = ch
        self.mid = ResBlock(conv, cin, cin, tdim, spec.groups)
        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in reversed(range(len(chans))):
            ch = chans[i]
            self.up_blocks.append(ResBlock(conv, cin + ch, ch, tdim, spec.groups))
            if i > 0:
                self.upsamples.append(conv(ch, ch, 3, padding=1))
            cin = ch
        self.out_norm = _norm(cin, spec.groups)
        self.out = conv(cin, spec.in_channels, 3, padding=1)
        # untrained model predicts zero noise, so the initial loss is E[eps^2]
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x, t, y=None):
        m = self.spec.size_multiple
        if any(s % m for s in x.shape[2:]):
            raise ValueError(f"spatial size {tuple(x.shape[2:])} not divisible by {m}")
        emb = self.time_mlp(timestep_embedding(t, self.spec.base_channels).to(x.dtype))
        if self.class_emb is not None:
            if y is None:
                raise ValueError("class-conditional denoiser needs labels")
            emb = emb + self.class_emb(y)
        h = self.stem(x)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, emb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        h = self.mid(h, emb)
        for j, block in enumerate(self.up_blocks):
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
            if j < len(self.upsamples):
                h = self.upsamples[j](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.out(F.silu(self.out_norm(h)))
