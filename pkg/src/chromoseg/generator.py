"""Nested U-shape generator: a triangular grid of convolution blocks joined
by max-pool encoders, channel-preserving up-sampling, and dense same-level
skip concatenations, with a 1x1 softmax head emitting per-pixel class
probabilities.

Node (i, j) sits at level i (spatial size input/2^i) and column j. Column 0
is the encoder; node (i, j>0) consumes every previous same-level output plus
the up-sampled output of node (i+1, j-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class GeneratorConfig:
    filters: tuple[int, ...] = (64, 128, 256, 512, 1024)
    in_channels: int = 1
    num_classes: int = 4
    input_size: int = 128
    # "bilinear" keeps channels through up-sampling; "deconv" uses a learned
    # 2x2 transposed conv mapping f(i+1) -> f(i), which changes the channel
    # plan of the j>0 nodes (see channel_plan).
    upsample: str = "bilinear"

    def __post_init__(self):
        if any(a >= b for a, b in zip(self.filters, self.filters[1:])):
            raise ValueError("filters must be strictly increasing")
        if self.input_size % 2 ** (len(self.filters) - 1) != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^{len(self.filters) - 1}"
            )
        if self.upsample not in ("bilinear", "deconv"):
            raise ValueError("upsample must be 'bilinear' or 'deconv'")

    @property
    def depth(self) -> int:
        return len(self.filters)


@dataclass(frozen=True)
class NodePlan:
    level: int
    column: int
    in_ch: int
    mid_ch: int
    out_ch: int


def node_grid(cfg: GeneratorConfig) -> list[tuple[int, int]]:
    """All (level, column) pairs of the triangular node grid."""
    d = cfg.depth
    return [(i, j) for i in range(d) for j in range(d - i)]


def channel_plan(level: int, column: int, cfg: GeneratorConfig) -> NodePlan:
    """Channel triple of one node.

    Encoder nodes keep the pooled channel count of the level above; a
    decoder node at column j concatenates j same-level outputs of f(i)
    channels with one up-sampled map (f(i+1) channels when up-sampling
    preserves channels, f(i) for the learned-deconv variant).
    """
    d = cfg.depth
    if not (0 <= level < d and 0 <= column < d - level):
        raise ValueError(f"node ({level}, {column}) outside the triangular grid of depth {d}")
    f = cfg.filters
    if column == 0:
        in_ch = cfg.in_channels if level == 0 else f[level - 1]
    else:
        up_ch = f[level + 1] if cfg.upsample == "bilinear" else f[level]
        in_ch = f[level] * column + up_ch
    return NodePlan(level=level, column=column, in_ch=in_ch, mid_ch=f[level], out_ch=f[level])


class NestedConvBlock(nn.Module):
    """Two 3x3 conv (pad 1, stride 1) -> batch norm -> ReLU stages."""

    def __init__(self, in_ch: int, mid_ch: int, out_ch: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, mid_ch, kernel_size=3, padding=1, stride=1),
            nn.BatchNorm2d(mid_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid_ch, out_ch, kernel_size=3, padding=1, stride=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class NestedUNetGenerator(nn.Module):
    """The full triangular node graph plus the 1x1 softmax head."""

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg or GeneratorConfig()
        cfg = self.cfg
        self.blocks = nn.ModuleDict()
        for i, j in node_grid(cfg):
            plan = channel_plan(i, j, cfg)
            self.blocks[f"node_{i}_{j}"] = NestedConvBlock(plan.in_ch, plan.mid_ch, plan.out_ch)
        self.pool = nn.MaxPool2d(kernel_size=2, stride=2)
        if cfg.upsample == "bilinear":
            self.up = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=True)
        else:
            self.up = nn.ModuleDict(
                {
                    f"up_{i}_{j}": nn.ConvTranspose2d(
                        cfg.filters[i + 1], cfg.filters[i], kernel_size=2, stride=2
                    )
                    for i, j in node_grid(cfg)
                    if j > 0
                }
            )
        self.head = nn.Conv2d(cfg.filters[0], cfg.num_classes, kernel_size=1)

    def _upsample(self, x, i: int, j: int):
        if self.cfg.upsample == "bilinear":
            return self.up(x)
        return self.up[f"up_{i}_{j}"](x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(N, in_channels, S, S) image -> (N, num_classes, S, S) probabilities."""
        cfg = self.cfg
        expected = (cfg.in_channels, cfg.input_size, cfg.input_size)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"expected input (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                             f"got {tuple(x.shape)}")
        d = cfg.depth
        outputs: dict[tuple[int, int], torch.Tensor] = {}
        outputs[(0, 0)] = self.blocks["node_0_0"](x)
        for i in range(1, d):
            outputs[(i, 0)] = self.blocks[f"node_{i}_0"](self.pool(outputs[(i - 1, 0)]))
        for j in range(1, d):
            for i in range(d - j):
                up = self._upsample(outputs[(i + 1, j - 1)], i, j)
                parts = [outputs[(i, k)] for k in range(j)] + [up]
                sizes = {tuple(p.shape[-2:]) for p in parts}
                if len(sizes) != 1:
                    raise RuntimeError(f"node ({i},{j}) received mismatched sizes {sizes}")
                outputs[(i, j)] = self.blocks[f"node_{i}_{j}"](torch.cat(parts, dim=1))
        logits = self.head(outputs[(0, d - 1)])
        return torch.softmax(logits, dim=1)


def build_generator(cfg: GeneratorConfig | None = None) -> NestedUNetGenerator:
    return NestedUNetGenerator(cfg)


def count_parameters(module: nn.Module, trainable_only: bool = True) -> int:
    return sum(
        p.numel() for p in module.parameters() if p.requires_grad or not trainable_only
    )
