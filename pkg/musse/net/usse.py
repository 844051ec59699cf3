# -*- coding: utf-8 -*-

"""
Single-stage displacement and strain estimator.
"""

from typing import Dict, List, Optional, Sequence, Tuple
import dataclasses
import torch
import torch.nn as nn
import torch.nn.functional as F
from ..fieldops import (
    DisplacementField, StrainMap,
    lsqse_strain, warp_upsampled,
)
from ..rfdata import RFSequence, sequence_tensors
from .config import NetworkConfig, level_shape
from .encoder import EncoderFeatures, build_encoder, init_conv
from .attention import TriCrossAttention, ConcatFusion
from .decoder import Decoder, DecoderState, HEAD_INIT_SCALE


@dataclasses.dataclass
class ForwardOutput:
    """
    Per time step outputs, each a (B, C, H, W) tensor.
    """
    displacements: List[torch.Tensor]
    strains: List[torch.Tensor]
    warped: List[torch.Tensor]
    # per time step, (level, increment at level resolution)
    increments: List[List[Tuple[int, torch.Tensor]]]

    @property
    def T(self) -> int:
        return len(self.displacements)

    def fields(self) -> List[DisplacementField]:
        return [DisplacementField.from_tensor(d) for d in self.displacements]

    def strain_maps(self) -> List[StrainMap]:
        return [StrainMap.from_tensor(z) for z in self.strains]


class USSENet(nn.Module):
    """
    Three-stream encoder, bottleneck fusion and a recurrent decoder.

    Time steps share the reference frame and are processed in order; the
    decoder state is carried from one step to the next and reset between
    sequences.
    """
    def __init__(self, cfg: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = build_encoder(cfg)
        top = cfg.channels(cfg.levels)
        if cfg.ablation.use_tca:
            self.bottleneck = TriCrossAttention(top)
        elif cfg.ablation.use_cacff:
            self.bottleneck = ConcatFusion(top)
        else:
            self.bottleneck = None
        self.decoder = Decoder(cfg)
        init_conv(self)
        init_conv(self.decoder.heads, HEAD_INIT_SCALE)

    def encode(self, pre: torch.Tensor, post: torch.Tensor) -> EncoderFeatures:
        self.cfg.check_input(pre.shape[-2], pre.shape[-1])
        return self.encoder(pre, post)

    def fuse_bottleneck(self, features: EncoderFeatures) -> torch.Tensor:
        if self.bottleneck is None:
            return features.mid[-1]
        return self.bottleneck(features.pre[-1], features.post[-1], features.mid[-1])

    def step(self, pre: torch.Tensor, post: torch.Tensor, state: DecoderState,
             trace: Optional[Dict[str, Tuple[int, ...]]] = None) -> Tuple[torch.Tensor, List[Tuple[int, torch.Tensor]]]:
        """
        One time step: full-resolution displacement and the per-level increments.
        """
        features = self.encode(pre, post)
        bottleneck = self.fuse_bottleneck(features)
        if trace is not None:
            for name in ('pre', 'post', 'mid'):
                grids = getattr(features, name)
                for level, f in enumerate(grids or [], 1):
                    trace[f"encoder.{name}.{level}"] = tuple(f.shape[1:])
            trace["bottleneck"] = tuple(bottleneck.shape[1:])
        increments = self.decoder(bottleneck, features, state, trace)
        size = pre.shape[-2:]
        disp = sum(F.interpolate(inc, size=size, mode='bilinear', align_corners=False) * 2 ** level
                   for level, inc in increments)
        if trace is not None:
            trace["displacement"] = tuple(disp.shape[1:])
        return disp, increments

    def estimate(self, pre: torch.Tensor, posts: Sequence[torch.Tensor],
                 trace: Optional[Dict[str, Tuple[int, ...]]] = None):
        """
        Displacements of every post frame relative to `pre`, from a fresh decoder state.
        """
        state = DecoderState()
        displacements, increments = [], []
        for post in posts:
            disp, inc = self.step(pre, post, state, trace)
            displacements.append(disp)
            increments.append(inc)
        return displacements, increments

    def forward(self, pre: torch.Tensor, posts: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        return self.estimate(pre, posts)[0]


def parameter_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def forward_tensors(model: USSENet, pre: torch.Tensor, posts: Sequence[torch.Tensor],
                    warp_sources: Optional[Sequence[torch.Tensor]] = None) -> ForwardOutput:
    """
    Network pass plus warping and strain estimation.
    :param warp_sources:    frames warped with the estimated displacement; default the posts
    """
    cfg = model.cfg
    displacements, increments = model.estimate(pre, posts)
    sources = posts if warp_sources is None else warp_sources
    warped = [warp_upsampled(src, d, cfg.upsample_factor) for src, d in zip(sources, displacements)]
    strains = [lsqse_strain(d[:, :1], cfg.lsqse) for d in displacements]
    return ForwardOutput(displacements, strains, warped, increments)


def usse_forward(model: USSENet, seq: RFSequence) -> ForwardOutput:
    """
    Estimate displacement and strain of every (pre, post) pair of a sequence.
    """
    model.cfg.check_input(*seq.shape)
    pre, posts = sequence_tensors(seq, model.cfg.normalize_input, parameter_dtype(model))
    return forward_tensors(model, pre, posts)


def expected_shapes(cfg: NetworkConfig, height: int, width: int) -> Dict[str, Tuple[int, ...]]:
    """
    Shapes, without the batch axis, of every grid a forward pass produces.
    """
    cfg.check_input(height, width)
    shapes = {}
    streams = ('pre', 'post', 'mid') if cfg.ablation.use_cacff else ('mid',)
    for level in range(1, cfg.levels + 1):
        for name in streams:
            shapes[f"encoder.{name}.{level}"] = (cfg.channels(level), *level_shape(height, width, level))
    shapes["bottleneck"] = (cfg.channels(cfg.levels), *level_shape(height, width, cfg.levels))
    for level in range(cfg.levels - 1, 0, -1):
        shapes[f"decoder.{level}"] = (cfg.hidden(level), *level_shape(height, width, level))
        shapes[f"increment.{level}"] = (2, *level_shape(height, width, level))
    shapes["displacement"] = (2, height, width)
    return shapes
