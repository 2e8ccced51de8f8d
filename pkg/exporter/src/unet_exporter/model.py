"""2D U-Net with an exposed bottleneck ("middle") layer.

Encoder: double-conv blocks starting at ``base_filters`` channels, doubled at
each of ``depth`` downsampling steps; decoder mirrors with skip connections.
The middle layer is the bottleneck feature map; its latent vector is either
the channel-wise global spatial average ("pool", default) or the raw
flattened map ("flat").
"""

import torch
from torch import nn


class DoubleConv(nn.Sequential):
    """Two 3x3 convolutions with group normalization.

    Group norm rather than batch norm: it behaves identically in train and
    eval mode, so exports are deterministic and small-batch training is
    stable."""

    def __init__(self, in_ch: int, out_ch: int):
        groups = min(8, out_ch)
        super().__init__(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.GroupNorm(groups, out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.GroupNorm(groups, out_ch),
            nn.ReLU(inplace=True),
        )


class UNet(nn.Module):
    def __init__(
        self,
        in_channels: int = 1,
        n_classes: int = 4,
        base_filters: int = 48,
        depth: int = 4,
    ):
        super().__init__()
        self.depth = depth
        self.n_classes = n_classes
        widths = [base_filters * 2**i for i in range(depth + 1)]

        self.enc = nn.ModuleList()
        prev = in_channels
        for w in widths[:-1]:
            self.enc.append(DoubleConv(prev, w))
            prev = w
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = DoubleConv(widths[-2], widths[-1])
        self.bottleneck_channels = widths[-1]

        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for w in reversed(widths[:-1]):
            self.up.append(nn.ConvTranspose2d(w * 2, w, 2, stride=2))
            self.dec.append(DoubleConv(w * 2, w))
        self.head = nn.Conv2d(widths[0], n_classes, 1)

    def forward(self, x: torch.Tensor, return_bottleneck: bool = False):
        """Returns pre-softmax logits (B, n_classes, H, W); optionally also
        the bottleneck feature map."""
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        mid = x
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([skip, x], dim=1))
        logits = self.head(x)
        if return_bottleneck:
            return logits, mid
        return logits

    def latent_dim(self, input_size: int, mode: str = "pool") -> int:
        if mode == "pool":
            return self.bottleneck_channels
        side = input_size // 2**self.depth
        return self.bottleneck_channels * side * side


def pool_latent(bottleneck: torch.Tensor, mode: str = "pool") -> torch.Tensor:
    """Collapse a (B, C, h, w) bottleneck map into the exported latent."""
    if mode == "pool":
        return bottleneck.mean(dim=(2, 3))
    if mode == "flat":
        return bottleneck.flatten(1)
    raise ValueError(f"unknown latent mode {mode!r}")
