import torch.nn as nn


def norm(channels: int) -> nn.GroupNorm:
    groups = 4 if channels % 4 == 0 else 1
    return nn.GroupNorm(groups, channels)


def conv_block(cin: int, cout: int, kernel_size: int = 3, dilation: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size, padding=dilation * (kernel_size // 2), dilation=dilation, bias=False),
        norm(cout),
        nn.ReLU(inplace=True),
    )
