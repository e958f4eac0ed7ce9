"""Channel, spatial and dual attention on a pair of bottleneck feature maps.

Channel gates are computed from the sum of both images' pooled descriptors
and shared by the pair; spatial maps are computed per image. Everything is
symmetric under swapping the two inputs.
"""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..exceptions import ConfigError
from .config import AttentionConfig


def eca_kernel_size(channels: int, gamma: float = 2, b: float = 1) -> int:
    """Odd integer nearest to ``log2(C)/gamma + b/gamma``, at least 1."""
    t = math.log2(channels) / gamma + b / gamma
    k = 2 * math.floor((t - 1) / 2 + 0.5) + 1
    return max(k, 1)


def pooled_descriptor(fa, fb):
    return fa.mean(dim=(2, 3)) + fb.mean(dim=(2, 3))


class SEGate(nn.Module):
    def __init__(self, channels, reduction=16):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"se_reduction {reduction} does not divide {channels} channels")
        self.fc1 = nn.Linear(channels, channels // reduction, bias=False)
        self.fc2 = nn.Linear(channels // reduction, channels, bias=False)

    def forward(self, fa, fb):
        z = pooled_descriptor(fa, fb)
        return torch.sigmoid(self.fc2(F.relu(self.fc1(z))))


class ECAGate(nn.Module):
    def __init__(self, channels, gamma=2, b=1):
        super().__init__()
        self.kernel_size = eca_kernel_size(channels, gamma, b)
        self.conv = nn.Conv1d(1, 1, self.kernel_size, padding=self.kernel_size // 2, bias=False)

    def forward(self, fa, fb):
        z = pooled_descriptor(fa, fb)
        return torch.sigmoid(self.conv(z.unsqueeze(1)).squeeze(1))


def msa_map(f):
    """Channel-mean map min-max scaled to [0, 1] per sample; all ones when flat."""
    m = f.mean(dim=1, keepdim=True)
    lo = m.amin(dim=(2, 3), keepdim=True)
    hi = m.amax(dim=(2, 3), keepdim=True)
    span = hi - lo
    flat = span <= 0
    scaled = (m - lo) / torch.where(flat, torch.ones_like(span), span)
    return torch.where(flat, torch.ones_like(m), scaled)


class MSA(nn.Module):
    def forward(self, f):
        return msa_map(f)


class ASPPSpatial(nn.Module):
    """Parallel atrous 3x3 branches fused by a 1x1 conv into a sigmoid map."""

    def __init__(self, channels, rates=(1, 2, 4, 8)):
        super().__init__()
        self.rates = tuple(rates)
        width = max(channels // 4, 1)
        self.branches = nn.ModuleList(
            nn.Conv2d(channels, width, 3, padding=r, dilation=r) for r in self.rates
        )
        self.fuse = nn.Conv2d(width * len(self.rates), 1, 1)

    def forward(self, f):
        size = min(f.shape[-2:])
        if max(self.rates) >= size:
            raise ConfigError(f"ASPP rate {max(self.rates)} needs padding >= feature size {size}")
        x = torch.cat([F.relu(br(f)) for br in self.branches], dim=1)
        return torch.sigmoid(self.fuse(x))


class DualAttention(nn.Module):
    """Position and channel self-attention driven by the pair's summed features.

    Affinities come from ``G = F_a + F_b``; each image aggregates its own
    features with them and keeps a residual. The learnable scales start at
    zero, so the initial output is ``2 * F``.
    """

    def __init__(self, channels, reduction=8):
        super().__init__()
        inner = max(channels // reduction, 1)
        self.query = nn.Conv2d(channels, inner, 1)
        self.key = nn.Conv2d(channels, inner, 1)
        self.value = nn.Conv2d(channels, channels, 1)
        self.gamma_pos = nn.Parameter(torch.zeros(1))
        self.gamma_chn = nn.Parameter(torch.zeros(1))

    def affinities(self, g):
        n, c, h, w = g.shape
        q = self.query(g).flatten(2)                                   # (n, c', N)
        k = self.key(g).flatten(2)
        pos = torch.softmax(torch.bmm(q.transpose(1, 2), k), dim=-1)    # (n, N, N)
        gf = g.flatten(2)
        chn = torch.softmax(torch.bmm(gf, gf.transpose(1, 2)), dim=-1)  # (n, C, C)
        return pos, chn

    def attend(self, f, pos, chn):
        n, c, h, w = f.shape
        v = self.value(f).flatten(2)
        p = torch.bmm(v, pos.transpose(1, 2)).view(n, c, h, w)
        ch = torch.bmm(chn, f.flatten(2)).view(n, c, h, w)
        return (self.gamma_pos * p + f) + (self.gamma_chn * ch + f)

    def forward(self, fa, fb):
        pos, chn = self.affinities(fa + fb)
        return self.attend(fa, pos, chn), self.attend(fb, pos, chn)


class PairAttention(nn.Module):
    """Applies the configured attention to ``(F_a, F_b)``.

    For SE/ECA x MSA/ASPP the output is ``F * g * s`` with a channel gate
    ``g`` shared by the pair and a per-image spatial map ``s``.
    """

    def __init__(self, channels, cfg: AttentionConfig = AttentionConfig()):
        super().__init__()
        self.cfg = cfg
        self.danet = DualAttention(channels, cfg.danet_reduction) if cfg.danet else None
        self.channel = None
        self.spatial = None
        if cfg.channel == "SE":
            self.channel = SEGate(channels, cfg.se_reduction)
        elif cfg.channel == "ECA":
            self.channel = ECAGate(channels, cfg.eca_gamma, cfg.eca_b)
        if cfg.spatial == "MSA":
            self.spatial = MSA()
        elif cfg.spatial == "ASPP":
            self.spatial = ASPPSpatial(channels, cfg.aspp_rates)

    def gates(self, fa, fb):
        g = self.channel(fa, fb)[:, :, None, None] if self.channel is not None else None
        sa = self.spatial(fa) if self.spatial is not None else None
        sb = self.spatial(fb) if self.spatial is not None else None
        return g, sa, sb

    def forward(self, fa, fb):
        if self.danet is not None:
            return self.danet(fa, fb)
        g, sa, sb = self.gates(fa, fb)
        if g is not None:
            fa, fb = fa * g, fb * g
        if sa is not None:
            fa, fb = fa * sa, fb * sb
        return fa, fb
