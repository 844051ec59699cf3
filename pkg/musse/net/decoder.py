# -*- coding: utf-8 -*-

"""
Sequential decoder: skip fusion and a convolutional LSTM per level, with a
displacement head on every level.
"""

from typing import Dict, List, Optional, Sequence, Tuple
import dataclasses
import torch
import torch.nn as nn
import torch.nn.functional as F
from ..errors import ShapeError
from .config import NetworkConfig
from .encoder import EncoderFeatures

# displacement heads start small so the first warps are close to identity
HEAD_INIT_SCALE = 0.1


def upsample2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode='bilinear', align_corners=False)


def _check_skips(h_prev: torch.Tensor, skips: Sequence[torch.Tensor], channels: int):
    size = (2 * h_prev.shape[-2], 2 * h_prev.shape[-1])
    for s in skips:
        if tuple(s.shape[-2:]) != size or s.shape[1] != channels or s.shape[0] != h_prev.shape[0]:
            raise ShapeError(f"shape error: skip {tuple(s.shape)} does not match state {tuple(h_prev.shape)}")


class CAFBlock(nn.Module):
    """
    Cross-attentive fusion: each skip feature is weighted by a sigmoid map
    computed from the whole skip stack, then added to the state upsampled
    along a learnable and a bilinear path.
    """
    def __init__(self, in_channels: int, out_channels: int, n_skips: int):
        super().__init__()
        self.out_channels = out_channels
        self.gate = nn.Conv2d(n_skips * out_channels, n_skips, 1)
        self.fuse = nn.Conv2d(n_skips * out_channels, out_channels, 1, bias=False)
        self.transposed = nn.ConvTranspose2d(in_channels, out_channels, 2, stride=2)
        self.bilinear = nn.Conv2d(in_channels, out_channels, 1)

    def upsample(self, h_prev: torch.Tensor) -> torch.Tensor:
        return self.transposed(h_prev) + self.bilinear(upsample2(h_prev))

    def attention(self, skips: Sequence[torch.Tensor]) -> torch.Tensor:
        return torch.sigmoid(self.gate(torch.cat(list(skips), dim=1)))

    def forward(self, h_prev: torch.Tensor, skips: Sequence[torch.Tensor]) -> torch.Tensor:
        _check_skips(h_prev, skips, self.out_channels)
        gates = self.attention(skips)
        weighted = torch.cat([s * gates[:, i:i + 1] for i, s in enumerate(skips)], dim=1)
        return self.upsample(h_prev) + self.fuse(weighted)


class SkipConcatBlock(nn.Module):
    """
    Bilinear upsampling and plain skip concatenation.
    """
    def __init__(self, in_channels: int, out_channels: int, n_skips: int):
        super().__init__()
        self.out_channels = out_channels
        self.fuse = nn.Conv2d(in_channels + n_skips * out_channels, out_channels, 1)

    def forward(self, h_prev: torch.Tensor, skips: Sequence[torch.Tensor]) -> torch.Tensor:
        _check_skips(h_prev, skips, self.out_channels)
        return self.fuse(torch.cat([upsample2(h_prev)] + list(skips), dim=1))


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(in_channels + hidden_channels, 4 * hidden_channels,
                               kernel_size, padding=kernel_size // 2)

    def zero_state(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        shape = (x.shape[0], self.hidden_channels, x.shape[-2], x.shape[-1])
        return x.new_zeros(shape), x.new_zeros(shape)

    def forward(self, x: torch.Tensor,
                state: Optional[Tuple[torch.Tensor, torch.Tensor]] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        h, c = self.zero_state(x) if state is None else state
        if h.shape[0] != x.shape[0] or h.shape[-2:] != x.shape[-2:] or h.shape[1] != self.hidden_channels:
            raise ShapeError(f"shape error: state {tuple(h.shape)} does not fit input {tuple(x.shape)}")
        i, f, o, g = torch.chunk(self.gates(torch.cat([x, h], dim=1)), 4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


@dataclasses.dataclass
class DecoderState:
    """
    Hidden and cell state per decoder level, carried across time steps of one sequence.
    """
    cells: Dict[int, Tuple[torch.Tensor, torch.Tensor]] = dataclasses.field(default_factory=dict)

    def get(self, level: int) -> Optional[Tuple[torch.Tensor, torch.Tensor]]:
        return self.cells.get(level)

    def reset(self):
        self.cells.clear()


class Decoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        n_skips = 3 if cfg.ablation.use_cacff else 1
        block = CAFBlock if cfg.ablation.use_caf else SkipConcatBlock
        # coarse to fine
        self.level_ids = list(range(cfg.levels - 1, 0, -1))
        fuse, lstm, heads = [], [], []
        for level in self.level_ids:
            in_channels = cfg.channels(cfg.levels) if level == cfg.levels - 1 else cfg.hidden(level + 1)
            fuse.append(block(in_channels, cfg.channels(level), n_skips))
            lstm.append(ConvLSTMCell(cfg.channels(level), cfg.hidden(level)))
            heads.append(nn.Conv2d(cfg.hidden(level), 2, 3, padding=1))
        self.fuse = nn.ModuleList(fuse)
        self.lstm = nn.ModuleList(lstm)
        self.heads = nn.ModuleList(heads)

    def forward(self, bottleneck: torch.Tensor, features: EncoderFeatures, state: DecoderState,
                trace: Optional[Dict[str, Tuple[int, ...]]] = None) -> List[Tuple[int, torch.Tensor]]:
        """
        Run all levels for one time step, updating `state` in place.
        :return:    (level, displacement increment at level resolution), coarse first
        """
        h = bottleneck
        increments = []
        for level, fuse, lstm, head in zip(self.level_ids, self.fuse, self.lstm, self.heads):
            x = fuse(h, features.skips(level))
            h, c = lstm(x, state.get(level))
            state.cells[level] = (h, c)
            increment = head(h)
            increments.append((level, increment))
            if trace is not None:
                trace[f"decoder.{level}"] = tuple(h.shape[1:])
                trace[f"increment.{level}"] = tuple(increment.shape[1:])
        return increments
