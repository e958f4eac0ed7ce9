import torch
import torch.nn as nn

from .attention import PairAttention
from .config import ModelConfig
from .decoder import DecoderD1, DecoderD2
from .encoder import Encoder, encode_pair


class CoSegNet(nn.Module):
    """Siamese encoder, pair attention at the bottleneck, shared decoder.

    ``forward(a, b)`` takes two ``(N, 1, H, W)`` batches and returns the two
    lesion-probability maps of the same shape.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        self.encoder = Encoder(enc)
        self.attention = PairAttention(enc.bottleneck_channels, cfg.attention)
        if cfg.decoder.variant == "D1":
            self.decoder = DecoderD1(enc.bottleneck_channels)
        else:
            self.decoder = DecoderD2(enc.bottleneck_channels, enc.lowlevel_channels,
                                     cfg.decoder.d2_lowlevel_channels)

    def encode(self, a, b):
        return encode_pair(self.encoder, a, b)

    def forward(self, a, b):
        fa, fb, la, lb = self.encode(a, b)
        fa, fb = self.attention(fa, fb)
        n = a.shape[0]
        # one decoder pass over the stacked pair keeps the weights shared
        out = self.decoder(torch.cat([fa, fb]), torch.cat([la, lb]))
        return out[:n], out[n:]


def forward_pair(model: CoSegNet, image_a, image_b):
    """Probability maps for a single pair of 2-D arrays or tensors."""
    a = torch.as_tensor(image_a, dtype=next(model.parameters()).dtype)
    b = torch.as_tensor(image_b, dtype=a.dtype)
    while a.dim() < 4:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    with torch.no_grad():
        pa, pb = model(a, b)
    return pa[0, 0].numpy(), pb[0, 0].numpy()
