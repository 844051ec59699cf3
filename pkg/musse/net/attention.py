# -*- coding: utf-8 -*-

"""
Bottleneck fusion of the three encoder streams.
"""

import math
import torch
import torch.nn as nn
from ..errors import ShapeError


class PairAttention(nn.Module):
    """
    Scaled dot-product attention between two feature grids; spatial
    positions are the tokens and the key-side feature is the value.
    """
    def __init__(self, channels: int):
        super().__init__()
        self.query = nn.Conv2d(channels, channels, 1)
        self.key = nn.Conv2d(channels, channels, 1)

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        n, c, h, w = a.shape
        q = self.query(a).flatten(2)
        k = self.key(b).flatten(2)
        # (n, hw, hw)
        weights = torch.softmax(torch.bmm(q.transpose(1, 2), k) / math.sqrt(c), dim=-1)
        out = torch.bmm(b.flatten(2), weights.transpose(1, 2))
        return out.view(n, c, h, w)


class TriCrossAttention(nn.Module):
    """
    Attention over the pairs (pre, post), (pre, mid) and (post, mid).

    The three results are projected back to the input width and turned into
    a channel distribution that gates the mid feature.
    """
    def __init__(self, channels: int):
        super().__init__()
        self.pre_post = PairAttention(channels)
        self.pre_mid = PairAttention(channels)
        self.post_mid = PairAttention(channels)
        self.project = nn.Conv2d(3 * channels, channels, 1)

    def scores(self, f_pre: torch.Tensor, f_post: torch.Tensor, f_mid: torch.Tensor) -> torch.Tensor:
        if not f_pre.shape == f_post.shape == f_mid.shape:
            raise ShapeError(f"shape error: bottleneck features {tuple(f_pre.shape)}, "
                             f"{tuple(f_post.shape)}, {tuple(f_mid.shape)} differ")
        stacked = torch.cat([
            self.pre_post(f_pre, f_post),
            self.pre_mid(f_pre, f_mid),
            self.post_mid(f_post, f_mid),
        ], dim=1)
        return torch.softmax(self.project(stacked), dim=1)

    def forward(self, f_pre: torch.Tensor, f_post: torch.Tensor, f_mid: torch.Tensor) -> torch.Tensor:
        return self.scores(f_pre, f_post, f_mid) * f_mid


class ConcatFusion(nn.Module):
    """
    Concatenation and a 1x1 convolution in place of the attention block.
    """
    def __init__(self, channels: int):
        super().__init__()
        self.project = nn.Conv2d(3 * channels, channels, 1)

    def forward(self, f_pre: torch.Tensor, f_post: torch.Tensor, f_mid: torch.Tensor) -> torch.Tensor:
        if not f_pre.shape == f_post.shape == f_mid.shape:
            raise ShapeError("shape error: bottleneck features differ")
        return self.project(torch.cat([f_pre, f_post, f_mid], dim=1))
