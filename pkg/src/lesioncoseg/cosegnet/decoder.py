import torch
import torch.nn as nn
import torch.nn.functional as F

from ..exceptions import DataError
from .layers import conv_block


def upsample(x, factor):
    return F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)


class DecoderD1(nn.Module):
    """Three conv + x2 upsample blocks back to full resolution, then 1x1 conv and sigmoid."""

    def __init__(self, in_channels):
        super().__init__()
        widths = [max(in_channels // 2, 8), max(in_channels // 4, 8), max(in_channels // 8, 8)]
        blocks = []
        cin = in_channels
        for wdt in widths:
            blocks.append(conv_block(cin, wdt))
            cin = wdt
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(cin, 1, 1)

    def forward(self, f, low=None):
        x = f
        for block in self.blocks:
            x = upsample(block(x), 2)
        return torch.sigmoid(self.head(x))


class DecoderD2(nn.Module):
    """Fuses the attended stride-8 features with projected stride-4 features."""

    def __init__(self, in_channels, low_channels, proj_channels=16):
        super().__init__()
        mid = max(in_channels // 2, 16)
        self.project = conv_block(low_channels, proj_channels, kernel_size=1)
        self.fuse = nn.Sequential(
            conv_block(in_channels + proj_channels, mid),
            conv_block(mid, mid),
        )
        self.head = nn.Conv2d(mid, 1, 1)

    def forward(self, f, low):
        if low is None or low.shape[-2:] != (2 * f.shape[-2], 2 * f.shape[-1]):
            got = None if low is None else tuple(low.shape[-2:])
            raise DataError(f"low-level features {got} are not at twice the bottleneck size {tuple(f.shape[-2:])}")
        x = torch.cat([upsample(f, 2), self.project(low)], dim=1)
        x = upsample(self.fuse(x), 4)
        return torch.sigmoid(self.head(x))
