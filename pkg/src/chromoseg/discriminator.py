"""Patch-level conditional discriminator.

Scores (source image, segmentation map) pairs: the two inputs are
concatenated along channels and pushed through five 4x4 convolutions,
leaky-rectified between layers, with a terminal logistic squashing. Each
output cell judges one receptive-field patch; the map mean is the scalar
decision statistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple[int, ...] = (64, 128, 256, 512, 1)
    kernel: int = 4
    # "first four layers stride 2, the last stride 1"; the pix2pix-style
    # (2, 2, 2, 1, 1) schedule is available as a switch
    strides: tuple[int, ...] = (2, 2, 2, 2, 1)
    paddings: tuple[int, ...] = (2, 2, 2, 2, 2)
    leaky_slope: float = 0.2
    in_channels: int = 5  # source image + one-hot/probability channels
    sigmoid: bool = True

    def __post_init__(self):
        if not (len(self.channels) == len(self.strides) == len(self.paddings)):
            raise ValueError("channels, strides, and paddings must have equal length")


class PatchDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        self.cfg = cfg or DiscriminatorConfig()
        cfg = self.cfg
        layers: list[nn.Module] = []
        prev = cfg.in_channels
        last = len(cfg.channels) - 1
        for k, (ch, stride, pad) in enumerate(zip(cfg.channels, cfg.strides, cfg.paddings)):
            layers.append(nn.Conv2d(prev, ch, kernel_size=cfg.kernel, stride=stride, padding=pad))
            if k < last:
                layers.append(nn.LeakyReLU(cfg.leaky_slope, inplace=True))
            prev = ch
        if cfg.sigmoid:
            layers.append(nn.Sigmoid())
        self.net = nn.Sequential(*layers)

    def forward(self, image: torch.Tensor, segmap: torch.Tensor) -> torch.Tensor:
        """(N, 1, H, W) image and (N, C, H, W) map -> (N, 1, h, w) patch scores."""
        if image.shape[-2:] != segmap.shape[-2:] or image.shape[0] != segmap.shape[0]:
            raise ValueError(
                f"image {tuple(image.shape)} and segmap {tuple(segmap.shape)} disagree"
            )
        if image.shape[1] + segmap.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"concatenated channels {image.shape[1] + segmap.shape[1]} != "
                f"configured {self.cfg.in_channels}"
            )
        return self.net(torch.cat([image, segmap], dim=1))


def build_discriminator(cfg: DiscriminatorConfig | None = None) -> PatchDiscriminator:
    return PatchDiscriminator(cfg)


def score_map_size(cfg: DiscriminatorConfig, height: int, width: int) -> tuple[int, int]:
    """Output spatial size by the conv formula out = floor((n + 2p - k)/s) + 1."""
    h, w = height, width
    for stride, pad in zip(cfg.strides, cfg.paddings):
        h = (h + 2 * pad - cfg.kernel) // stride + 1
        w = (w + 2 * pad - cfg.kernel) // stride + 1
    return h, w


def receptive_field(cfg: DiscriminatorConfig) -> int:
    """Input pixels covered by one output cell (the patch size K)."""
    rf, jump = 1, 1
    for stride in cfg.strides:
        rf += (cfg.kernel - 1) * jump
        jump *= stride
    return rf
