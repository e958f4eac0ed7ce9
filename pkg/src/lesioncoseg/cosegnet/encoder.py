"""Small dilated residual encoder with output stride 8."""
import torch
import torch.nn as nn

from ..exceptions import ConfigError
from .config import EncoderConfig
from .layers import norm


class ResidualUnit(nn.Module):
    def __init__(self, cin, cout, stride=1, dilation=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation, bias=False)
        self.norm1 = norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=dilation, dilation=dilation, bias=False)
        self.norm2 = norm(cout)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), norm(cout))
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = self.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return self.relu(out + self.skip(x))


def _stage(cin, cout, rates, stride=1):
    units = [ResidualUnit(cin, cout, stride=stride, dilation=rates[0])]
    units += [ResidualUnit(cout, cout, dilation=r) for r in rates[1:]]
    return nn.Sequential(*units)


class Encoder(nn.Module):
    """Stem and two strided stages reach stride 8; two dilated stages keep it.

    ``forward`` returns ``(bottleneck, lowlevel)`` with the low-level tap at
    stride 4.
    """

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        c0, c1, c2, c3 = cfg.stage_channels
        n = cfg.units_per_stage
        self.stem = nn.Sequential(
            nn.Conv2d(1, c0, 3, stride=2, padding=1, bias=False), norm(c0), nn.ReLU(inplace=True)
        )
        self.stage1 = _stage(c0, c0, (1,) * n, stride=2)
        self.stage2 = _stage(c0, c1, (1,) * n, stride=2)
        self.stage3 = _stage(c1, c2, (cfg.dilations[0],) * n)
        self.stage4 = _stage(c2, c3, cfg.final_stage_rates)

    def forward(self, x):
        if x.shape[-1] % 8 or x.shape[-2] % 8:
            raise ConfigError(f"input size {tuple(x.shape[-2:])} is not divisible by 8")
        low = self.stage1(self.stem(x))
        out = self.stage4(self.stage3(self.stage2(low)))
        return out, low


def encode_pair(encoder: Encoder, a: torch.Tensor, b: torch.Tensor):
    """Run both images through the shared encoder; returns ``(F_a, F_b, L_a, L_b)``."""
    n = a.shape[0]
    feats, low = encoder(torch.cat([a, b], dim=0))
    return feats[:n], feats[n:], low[:n], low[n:]
