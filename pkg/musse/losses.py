# -*- coding: utf-8 -*-

"""
Unsupervised training losses: patchwise normalized cross-correlation
similarity, temporal strain consistency and second-order smoothness.

All functions take grids shaped ``(B, C, H, W)``; 2-D grids and the domain
types of `rfdata` and `fieldops` are accepted too.
"""

from typing import (
    Any, Dict, List,
    Optional, Sequence,
    Tuple, Union,
)
import dataclasses
import torch
import torch.nn.functional as F
from .errors import ConfigError, ParameterError, ShapeError
from .fieldops import DisplacementField, StrainMap, warp_bilinear
from .rfdata import RFFrame

GridLike = Union[torch.Tensor, RFFrame, StrainMap, DisplacementField]

# strain is correlated in percent so the stabilizer stays negligible
_STRAIN_SCALE = 100.0


@dataclasses.dataclass(frozen=True)
class PatchSpec:
    """
    :param patch_size:  odd patch side, pixels
    :param stride:      patch step; None tiles the grid without overlap
    :param epsilon:     stabilizer of the correlation denominator
    """
    patch_size: int = 9
    stride: Optional[int] = None
    epsilon: float = 1e-5

    def __post_init__(self):
        if not isinstance(self.patch_size, int) or self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ParameterError(f"parameter error: patch_size must be an odd integer >= 3, got {self.patch_size}")
        if self.stride is not None and self.stride < 1:
            raise ParameterError(f"parameter error: stride must be >= 1, got {self.stride}")
        if not 0 < self.epsilon <= 1e-2:
            raise ParameterError(f"parameter error: epsilon must lie in (0, 1e-2], got {self.epsilon}")

    @property
    def step(self) -> int:
        return self.patch_size if self.stride is None else self.stride


@dataclasses.dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.2
    gamma: float = 0.3

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ParameterError("parameter error: loss weights must be non-negative")
        if self.alpha + self.beta + self.gamma <= 0:
            raise ParameterError("parameter error: at least one loss weight must be positive")


@dataclasses.dataclass(frozen=True)
class LossConfig:
    weights: LossWeights = LossWeights()
    patch: PatchSpec = PatchSpec()
    # minimize the raw correlation of consecutive strain maps instead of 1 - correlation
    literal_consistency: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LossConfig':
        unknown = set(data) - {'weights', 'patch', 'literal_consistency'}
        if unknown:
            raise ConfigError(f"unknown loss keys: {sorted(unknown)}")
        try:
            return cls(LossWeights(**data.get('weights', {})), PatchSpec(**data.get('patch', {})),
                       bool(data.get('literal_consistency', False)))
        except TypeError as e:
            raise ConfigError(f"bad loss config: {e}") from e


@dataclasses.dataclass
class LossBreakdown:
    l_sim: torch.Tensor
    l_con: torch.Tensor
    l_smooth: torch.Tensor
    l_total: torch.Tensor
    # per time step; the first consistency entry is None
    per_t: Dict[str, List[Optional[torch.Tensor]]]

    def scalars(self) -> Dict[str, Any]:
        """
        Plain floats for logging.
        """
        def value(x):
            return None if x is None else float(x.detach())

        return {
            "t": {k: [value(x) for x in v] for k, v in self.per_t.items()},
            "l_sim": value(self.l_sim),
            "l_con": value(self.l_con),
            "l_smooth": value(self.l_smooth),
            "l_total": value(self.l_total),
        }


def _grid(x: GridLike) -> torch.Tensor:
    if isinstance(x, (RFFrame, StrainMap)):
        return x.tensor(torch.float64)
    if isinstance(x, DisplacementField):
        return x.tensor(torch.float64)
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[None]
    return x


def lncc(a: GridLike, b: GridLike, spec: PatchSpec = PatchSpec()) -> torch.Tensor:
    """
    Mean normalized cross-correlation of corresponding patches.

    Each patch is zero-meaned and its correlation is
    ``cov / sqrt(var_a * var_b + epsilon^2)``, population statistics.
    """
    a, b = _grid(a), _grid(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape error: {tuple(a.shape)} vs {tuple(b.shape)}")
    p, s = spec.patch_size, spec.step
    if a.shape[-2] < p or a.shape[-1] < p:
        raise ShapeError(f"shape error: a {p}x{p} patch does not fit into {tuple(a.shape[-2:])}")
    # (B, C*p*p, N)
    pa = F.unfold(a, kernel_size=p, stride=s)
    pb = F.unfold(b, kernel_size=p, stride=s)
    pa = pa - pa.mean(dim=1, keepdim=True)
    pb = pb - pb.mean(dim=1, keepdim=True)
    cov = (pa * pb).mean(dim=1)
    var_a = (pa * pa).mean(dim=1)
    var_b = (pb * pb).mean(dim=1)
    return (cov / torch.sqrt(var_a * var_b + spec.epsilon ** 2)).mean()


def similarity_loss(pre: GridLike, warped_posts: Sequence[GridLike],
                    spec: PatchSpec = PatchSpec()) -> Tuple[torch.Tensor, List[torch.Tensor]]:
    """
    ``1 - lncc(warped post, pre)`` per step, and their mean.
    """
    if not warped_posts:
        raise ConfigError("similarity loss needs at least one warped frame")
    pre = _grid(pre)
    per_t = [1.0 - lncc(w, pre, spec) for w in warped_posts]
    return torch.stack(per_t).mean(), per_t


def consistency_loss(strains: Sequence[GridLike], disps: Sequence[GridLike],
                     spec: PatchSpec = PatchSpec(),
                     literal: bool = False) -> Tuple[torch.Tensor, List[Optional[torch.Tensor]]]:
    """
    Temporal coherence of consecutive strain maps.

    Each map is motion-compensated with its own displacement before the
    comparison; the first step has no predecessor and the mean runs over
    the remaining T - 1 steps. A single step gives 0.
    """
    if len(strains) != len(disps):
        raise ShapeError(f"shape error: {len(strains)} strain maps for {len(disps)} displacement fields")
    compensated = [warp_bilinear(_grid(z), _grid(d)) * _STRAIN_SCALE for z, d in zip(strains, disps)]
    per_t: List[Optional[torch.Tensor]] = [None]
    for t in range(1, len(compensated)):
        corr = lncc(compensated[t], compensated[t - 1], spec)
        per_t.append(corr if literal else 1.0 - corr)
    terms = [x for x in per_t if x is not None]
    if not terms:
        zero = compensated[0].new_zeros(()) if compensated else torch.zeros((), dtype=torch.float64)
        return zero, per_t
    return torch.stack(terms).mean(), per_t


def second_order_terms(disp: torch.Tensor) -> List[torch.Tensor]:
    """
    ``d2/dx2, d2/dxdy, d2/dy2, d2/dydx`` of a (B, 2, H, W) field, each on its
    valid region. Mixed terms apply the centred first difference twice.
    """
    dxx = disp[..., :, 2:] - 2 * disp[..., :, 1:-1] + disp[..., :, :-2]
    dyy = disp[..., 2:, :] - 2 * disp[..., 1:-1, :] + disp[..., :-2, :]
    gx = (disp[..., :, 2:] - disp[..., :, :-2]) / 2
    gy = (disp[..., 2:, :] - disp[..., :-2, :]) / 2
    dxy = (gx[..., 2:, :] - gx[..., :-2, :]) / 2
    dyx = (gy[..., :, 2:] - gy[..., :, :-2]) / 2
    return [dxx, dxy, dyy, dyx]


def smoothness_loss(disps: Sequence[GridLike]) -> Tuple[torch.Tensor, List[torch.Tensor]]:
    """
    Sum of mean absolute second-order derivatives per step, averaged over steps.
    Affine fields give exactly 0.
    """
    if not disps:
        raise ConfigError("smoothness loss needs at least one displacement field")
    per_t = []
    for d in disps:
        d = _grid(d)
        if d.shape[-2] < 5 or d.shape[-1] < 5:
            raise ShapeError(f"shape error: smoothness needs at least 5x5 fields, got {tuple(d.shape[-2:])}")
        per_t.append(sum(term.abs().mean() for term in second_order_terms(d)))
    return torch.stack(per_t).mean(), per_t


def total_loss(l_sim, l_con, l_smooth, w: LossWeights = LossWeights()):
    return w.alpha * l_sim + w.beta * l_con + w.gamma * l_smooth


def compute_losses(pre: GridLike, warped_posts: Sequence[GridLike], strains: Sequence[GridLike],
                   disps: Sequence[GridLike], cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """
    All three components and their weighted total for one sequence.
    """
    l_sim, sim_t = similarity_loss(pre, warped_posts, cfg.patch)
    l_con, con_t = consistency_loss(strains, disps, cfg.patch, cfg.literal_consistency)
    l_smooth, smooth_t = smoothness_loss(disps)
    l_total = total_loss(l_sim, l_con, l_smooth, cfg.weights)
    return LossBreakdown(l_sim, l_con, l_smooth, l_total, {"sim": sim_t, "con": con_t, "smooth": smooth_t})
