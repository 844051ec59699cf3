# -*- coding: utf-8 -*-

"""
Three-stream encoder.

The pre and post branches share their weights; the mid branch reads both
frames stacked and takes the pre/post features of each level as residual
input.
"""

from typing import List, Optional
import dataclasses
import torch
import torch.nn as nn
from .config import NetworkConfig

_SLOPE = 0.1


def init_conv(module: nn.Module, scale: float = 1.0):
    """
    Kaiming initialization for every convolution below `module`, zero bias.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, a=_SLOPE, nonlinearity='leaky_relu')
            with torch.no_grad():
                m.weight.mul_(scale)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ResidualDown(nn.Module):
    """
    Residual block that halves the grid.
    """
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1, stride=2)
        self.act = nn.LeakyReLU(_SLOPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.conv2(self.act(self.conv1(x)))
        return self.act(y + self.skip(x))


class Branch(nn.Module):
    def __init__(self, in_channels: int, cfg: NetworkConfig):
        super().__init__()
        channels = [in_channels] + [cfg.channels(level) for level in range(1, cfg.levels + 1)]
        self.blocks = nn.ModuleList(ResidualDown(a, b) for a, b in zip(channels[:-1], channels[1:]))

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        features = []
        for block in self.blocks:
            x = block(x)
            features.append(x)
        return features


@dataclasses.dataclass
class EncoderFeatures:
    """
    Per-level features, index 0 is level 1 (half resolution).
    `pre` and `post` are None for the single-stream encoder.
    """
    mid: List[torch.Tensor]
    pre: Optional[List[torch.Tensor]] = None
    post: Optional[List[torch.Tensor]] = None

    @property
    def levels(self) -> int:
        return len(self.mid)

    def skips(self, level: int) -> List[torch.Tensor]:
        """
        Skip features of a 1-based level.
        """
        i = level - 1
        if self.pre is None:
            return [self.mid[i]]
        return [self.pre[i], self.post[i], self.mid[i]]


class CACFFEncoder(nn.Module):
    """
    Context-aware complementary feature fusion.
    """
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.shared = Branch(1, cfg)
        self.mid = nn.ModuleList(
            ResidualDown(a, b) for a, b in zip(
                [2] + [cfg.channels(level) for level in range(1, cfg.levels)],
                [cfg.channels(level) for level in range(1, cfg.levels + 1)],
            )
        )

    def forward(self, pre: torch.Tensor, post: torch.Tensor) -> EncoderFeatures:
        f_pre = self.shared(pre)
        f_post = self.shared(post)
        x = torch.cat([pre, post], dim=1)
        f_mid = []
        for block, a, b in zip(self.mid, f_pre, f_post):
            x = block(x) + a + b
            f_mid.append(x)
        return EncoderFeatures(f_mid, f_pre, f_post)


class PlainEncoder(nn.Module):
    """
    Single stream over the stacked frame pair.
    """
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.branch = Branch(2, cfg)

    def forward(self, pre: torch.Tensor, post: torch.Tensor) -> EncoderFeatures:
        return EncoderFeatures(self.branch(torch.cat([pre, post], dim=1)))


def build_encoder(cfg: NetworkConfig) -> nn.Module:
    return CACFFEncoder(cfg) if cfg.ablation.use_cacff else PlainEncoder(cfg)
