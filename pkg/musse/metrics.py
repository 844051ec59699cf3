# -*- coding: utf-8 -*-

"""
Strain image quality metrics: target, background and elastographic SNR,
contrast-to-noise ratio, and displacement NRMSE against ground truth.

Values are plain ratios, not decibels. Statistics use the population
standard deviation. Reports average per-pair values, pixels are never pooled
across pairs.
"""

from typing import (
    Any, Dict, List,
    Literal, NamedTuple, Optional, Sequence,
    Tuple, Union,
)
import dataclasses
import numpy as np
from .errors import (
    ConfigError, ShapeError,
    DegenerateROIError, DegenerateMapError, EmptySupportError,
)
from .fieldops import DisplacementField, StrainMap
from .rfdata import ROISpec, check_roi_pair

MIN_ROI_PIXELS = 16
DEGENERATE_STD = 1e-12
COLUMNS = ('SNR_t', 'SNR_bg', 'CNR', 'NRMSE', 'SNR_e')

MapLike = Union[StrainMap, np.ndarray]


def _grid(z: MapLike) -> np.ndarray:
    return z.z if isinstance(z, StrainMap) else np.asarray(z, dtype=np.float64)


def roi_values(z: MapLike, roi: ROISpec) -> np.ndarray:
    z = _grid(z)
    roi.check_inside(z.shape)
    values = z[roi.mask(z.shape)]
    if values.size < MIN_ROI_PIXELS:
        raise DegenerateROIError(f"degenerate ROI: {values.size} pixels, at least {MIN_ROI_PIXELS} needed")
    return values


def _snr(values: np.ndarray, what: str) -> float:
    std = values.std()
    if std < DEGENERATE_STD:
        raise DegenerateROIError(f"degenerate ROI: {what} region is constant")
    return float(values.mean() / std)


def snr_target(z: MapLike, roi: ROISpec) -> float:
    if roi.kind != 'target':
        raise ConfigError(f"snr_target needs a target ROI, got {roi.kind}")
    return _snr(roi_values(z, roi), 'target')


def snr_background(z: MapLike, roi: ROISpec) -> float:
    if roi.kind != 'background':
        raise ConfigError(f"snr_background needs a background ROI, got {roi.kind}")
    return _snr(roi_values(z, roi), 'background')


def snr_e(z: MapLike) -> float:
    """
    Mean over standard deviation of the whole map.
    """
    z = _grid(z)
    std = z.std()
    if std < DEGENERATE_STD:
        raise DegenerateMapError("degenerate map: strain map is constant")
    return float(z.mean() / std)


def cnr(z: MapLike, target: ROISpec, background: ROISpec) -> float:
    """
    ``sqrt(2 (mean_b - mean_t)^2 / (std_b^2 + std_t^2))``
    """
    z = _grid(z)
    check_roi_pair(target, background, z.shape)
    t = roi_values(z, target)
    b = roi_values(z, background)
    if t.std() < DEGENERATE_STD and b.std() < DEGENERATE_STD:
        raise DegenerateROIError("degenerate ROI: both regions are constant")
    return float(np.sqrt(2 * (b.mean() - t.mean()) ** 2 / (b.var() + t.var())))


class NrmseResult(NamedTuple):
    percent: float
    # pixels left out of the support
    excluded_fraction: float


def _axial(w: Union[DisplacementField, np.ndarray]) -> np.ndarray:
    return w.d_y.astype(np.float64) if isinstance(w, DisplacementField) else np.asarray(w, dtype=np.float64)


def nrmse(w_gt: Union[DisplacementField, np.ndarray], w_est: Union[DisplacementField, np.ndarray],
          mask_eps: float = 1e-3, norm: Literal['literal', 'gt_rms'] = 'literal') -> NrmseResult:
    """
    Axial displacement error in percent over pixels with ``|w_gt| > mask_eps``.

    :param norm:    literal takes the RMS of the relative error ``(gt - est) / gt``;
                    gt_rms divides the RMS error by the RMS of the ground truth.
    """
    gt, est = _axial(w_gt), _axial(w_est)
    if gt.shape != est.shape:
        raise ShapeError(f"shape error: ground truth {gt.shape} vs estimate {est.shape}")
    support = np.abs(gt) > mask_eps
    if not support.any():
        raise EmptySupportError(f"empty support: no ground truth displacement exceeds {mask_eps}")
    excluded = 1.0 - support.mean()
    g, e = gt[support], est[support]
    if norm == 'literal':
        value = np.sqrt(np.mean(((g - e) / g) ** 2))
    elif norm == 'gt_rms':
        value = np.sqrt(np.mean((g - e) ** 2)) / np.sqrt(np.mean(g ** 2))
    else:
        raise ConfigError(f"unknown nrmse norm: {norm!r}")
    return NrmseResult(float(100.0 * value), float(excluded))


@dataclasses.dataclass
class Stat:
    mean: float
    sd: float

    @classmethod
    def of(cls, values: Sequence[float]) -> 'Stat':
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.mean()), float(values.std()))

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "sd": self.sd}

    def __str__(self):
        return f"{self.mean:.2f} ± {self.sd:.2f}"


@dataclasses.dataclass
class PairMetrics:
    snr_t: float
    snr_bg: float
    cnr: float
    snr_e: float
    nrmse: Optional[float] = None
    excluded_fraction: Optional[float] = None
    # nominal applied strain of the pair
    level: Optional[float] = None
    source_id: str = ''
    t: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class MetricsReport:
    snr_t: Stat
    snr_bg: Stat
    cnr: Stat
    snr_e: Stat
    nrmse_percent: Optional[Stat]
    n_pairs: int
    per_pair: List[PairMetrics]
    roi: Optional[Tuple[ROISpec, ROISpec]] = None
    label: str = ''

    def column(self, name: str) -> Optional[Stat]:
        return {
            'SNR_t': self.snr_t, 'SNR_bg': self.snr_bg, 'CNR': self.cnr,
            'NRMSE': self.nrmse_percent, 'SNR_e': self.snr_e,
        }[name]

    def to_dict(self, per_pair: bool = True) -> Dict[str, Any]:
        data: Dict[str, Any] = {"label": self.label, "n_pairs": self.n_pairs}
        for name in COLUMNS:
            stat = self.column(name)
            data[name] = None if stat is None else stat.to_dict()
        if self.roi is not None:
            data["rois"] = {"target": self.roi[0].to_dict(), "background": self.roi[1].to_dict()}
        if per_pair:
            data["per_pair"] = [p.to_dict() for p in self.per_pair]
        return data

    def to_table(self) -> str:
        return format_table([self])


def format_table(reports: Sequence[MetricsReport]) -> str:
    """
    Aligned text table, one row per report.
    """
    rows = [['', *COLUMNS]]
    for report in reports:
        rows.append([report.label] + [
            '-' if report.column(name) is None else str(report.column(name)) for name in COLUMNS
        ])
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ['  '.join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in rows]
    return '\n'.join(lines) + '\n'


def pair_metrics(z: MapLike, rois: Tuple[ROISpec, ROISpec],
                 w_est: Optional[Union[DisplacementField, np.ndarray]] = None,
                 w_gt: Optional[Union[DisplacementField, np.ndarray]] = None,
                 mask_eps: float = 1e-3, norm: str = 'literal', **info) -> PairMetrics:
    """
    Metrics of one frame pair; NRMSE only when both displacements are given.
    """
    target, background = rois
    error = None
    if w_gt is not None and w_est is not None:
        error = nrmse(w_gt, w_est, mask_eps, norm)
    return PairMetrics(
        snr_target(z, target), snr_background(z, background), cnr(z, target, background), snr_e(z),
        None if error is None else error.percent,
        None if error is None else error.excluded_fraction,
        **info,
    )


def summarize(per_pair: Sequence[PairMetrics], roi: Optional[Tuple[ROISpec, ROISpec]] = None,
              label: str = '') -> MetricsReport:
    """
    Mean and standard deviation of per-pair metrics.
    """
    per_pair = list(per_pair)
    if not per_pair:
        raise ConfigError("a report needs at least one pair")
    errors = [p.nrmse for p in per_pair if p.nrmse is not None]
    return MetricsReport(
        Stat.of([p.snr_t for p in per_pair]),
        Stat.of([p.snr_bg for p in per_pair]),
        Stat.of([p.cnr for p in per_pair]),
        Stat.of([p.snr_e for p in per_pair]),
        Stat.of(errors) if errors else None,
        len(per_pair), per_pair, roi, label,
    )


def evaluate_pairwise(strains: Sequence[MapLike], rois: Tuple[ROISpec, ROISpec],
                      estimates: Optional[Sequence[DisplacementField]] = None,
                      gts: Optional[Sequence[DisplacementField]] = None,
                      levels: Optional[Sequence[float]] = None,
                      compressive: bool = True, mask_eps: float = 1e-3, norm: str = 'literal',
                      label: str = '', source_id: str = '') -> MetricsReport:
    """
    Metrics of every pair of one sequence and their summary.

    :param compressive: evaluate ``-z``, so that compression reads positive
    """
    n = len(strains)
    for name, items in (('estimates', estimates), ('gts', gts), ('levels', levels)):
        if items is not None and len(items) != n:
            raise ShapeError(f"shape error: {len(items)} {name} for {n} strain maps")
    per_pair = []
    for i, z in enumerate(strains):
        grid = _grid(z)
        per_pair.append(pair_metrics(
            -grid if compressive else grid, rois,
            None if estimates is None else estimates[i],
            None if gts is None else gts[i],
            mask_eps, norm,
            level=None if levels is None else float(levels[i]),
            source_id=source_id, t=i + 1,
        ))
    return summarize(per_pair, rois, label)


def metrics_by_level(per_pair: Sequence[PairMetrics],
                     levels: Optional[Sequence[float]] = None) -> Dict[float, MetricsReport]:
    """
    Reports grouped by nominal applied strain.
    Pairs without a level are skipped; `levels` restricts and orders the groups.
    """
    groups: Dict[float, List[PairMetrics]] = {}
    for p in per_pair:
        if p.level is not None:
            groups.setdefault(round(p.level, 10), []).append(p)
    keys = sorted(groups) if levels is None else [round(x, 10) for x in levels if round(x, 10) in groups]
    return {k: summarize(groups[k], label=f"{100 * k:g}%") for k in keys}
