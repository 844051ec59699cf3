# -*- coding: utf-8 -*-

"""
Stage-wise evaluation of a trained stack on the splits of a dataset.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging
import dataclasses
import numpy as np
import torch
from .errors import ConfigError, NoDataError
from .metrics import (
    MetricsReport, PairMetrics,
    evaluate_pairwise, format_table, metrics_by_level, summarize,
)
from .multistage import (
    MOptDecision, StageStack,
    musse_forward, select_m_opt, stage_differences,
)
from .rfdata import DatasetManifest, ROISpec, load_sequence

log = logging.getLogger(__name__)


def stage_label(m: int) -> str:
    return f"stage {m}"


@dataclasses.dataclass
class SplitEvaluation:
    split: str
    # one report per stage, stage 1 first
    reports: List[MetricsReport]
    # final stage, by nominal applied strain
    by_level: Dict[float, MetricsReport]
    # [m - 2][t - 1]: mean absolute displacement change of stage m against m - 1
    stage_changes: List[List[float]]
    m_opt: Optional[MOptDecision] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "split": self.split,
            "stages": [r.to_dict() for r in self.reports],
            "by_level": {f"{k:g}": r.to_dict(per_pair=False) for k, r in self.by_level.items()},
            "stage_changes": self.stage_changes,
            "m_opt": None if self.m_opt is None else {
                "m_opt": self.m_opt.m_opt, "converged": self.m_opt.converged, "diffs": self.m_opt.diffs,
            },
        }

    def to_table(self) -> str:
        text = f"[{self.split}]\n" + format_table(self.reports)
        if self.by_level:
            text += format_table(list(self.by_level.values()))
        if self.m_opt is not None:
            text += f"M_opt = {self.m_opt.m_opt}" + ("" if self.m_opt.converged else " (not converged)") + "\n"
        return text


@dataclasses.dataclass
class EvaluationResult:
    splits: Dict[str, SplitEvaluation]

    def to_dict(self) -> Dict[str, Any]:
        return {name: split.to_dict() for name, split in self.splits.items()}

    def to_table(self) -> str:
        return ''.join(split.to_table() for split in self.splits.values())


def evaluate_split(stack: StageStack, manifest: DatasetManifest, split: str,
                   rois: Optional[Tuple[ROISpec, ROISpec]] = None, mask_eps: float = 1e-3,
                   norm: str = 'literal', tau_rel: float = 0.01) -> SplitEvaluation:
    entries = manifest.split(split)
    if not entries:
        raise NoDataError(f"no data: split {split!r} is empty")
    per_stage: List[List[PairMetrics]] = [[] for _ in range(stack.M)]
    per_stage_fields: List[list] = [[] for _ in range(stack.M)]
    changes: List[List[List[float]]] = []
    for entry in entries:
        pair = entry.rois or rois
        if pair is None:
            raise ConfigError(f"no ROIs for {entry.path}")
        seq = load_sequence(manifest.resolve(entry))
        levels = None
        if entry.strain_levels is not None and len(entry.strain_levels) >= seq.T:
            levels = entry.strain_levels[:seq.T]
        with torch.no_grad():
            out = musse_forward(stack, seq)
        for m in range(1, stack.M + 1):
            fields = out.fields(m)
            report = evaluate_pairwise(out.strain_maps(m), pair, fields, seq.ground_truth, levels,
                                       mask_eps=mask_eps, norm=norm, source_id=seq.source_id or entry.path)
            per_stage[m - 1].extend(report.per_pair)
            per_stage_fields[m - 1].extend(fields)
        changes.append(stage_differences(out))
        log.debug("evaluated %s", entry.path, extra={"split": split, "T": seq.T})

    roi = rois if rois is not None else (entries[0].rois if len(entries) == 1 else None)
    reports = [summarize(pairs, roi, stage_label(m)) for m, pairs in enumerate(per_stage, 1)]
    # per stage transition and time step, averaged over sequences with that step
    stage_changes = []
    for k in range(stack.M - 1):
        steps = max(len(c[k]) for c in changes)
        stage_changes.append([
            float(np.mean([c[k][t] for c in changes if t < len(c[k])])) for t in range(steps)
        ])
    m_opt = select_m_opt(per_stage_fields, tau_rel) if stack.M >= 2 else None
    return SplitEvaluation(split, reports, metrics_by_level(per_stage[-1]), stage_changes, m_opt)


def evaluate(stack: StageStack, manifest: DatasetManifest,
             rois: Optional[Tuple[ROISpec, ROISpec]] = None,
             splits: Sequence[str] = ('test',), **kwargs) -> EvaluationResult:
    """
    Metrics of every stage on every non-empty split among `splits`.
    """
    result = {}
    for split in splits:
        if manifest.split(split):
            result[split] = evaluate_split(stack, manifest, split, rois, **kwargs)
            log.info("split %s evaluated", split, extra={"split": split, "pairs": result[split].reports[0].n_pairs})
    if not result:
        raise NoDataError(f"no data: none of the splits {list(splits)} has sequences")
    return EvaluationResult(result)
