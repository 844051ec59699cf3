# -*- coding: utf-8 -*-

"""
Training runs: data loading, stage-by-stage optimization, loss traces and
resumable checkpoints in a run directory.
"""

from typing import Dict, List, Optional, Union
import os
import logging
import dataclasses
import torch
from .checkpoint import (
    load_run_state, load_stack,
    save_run_state, save_stack,
)
from .config import TrainConfig
from .errors import (
    CheckpointError, ConfigError, DivergenceError,
    NoDataError,
)
from .logs import LossTraceWriter
from .multistage import (
    RunState, StageData, StageResult, StageStack,
    train_stage,
)
from .net import USSENet
from .rfdata import DatasetManifest, load_manifest, load_sequence, sequence_tensors
from .storage import JsonFileStorage

log = logging.getLogger(__name__)

LOSS_TRACE = 'losses.jsonl'


@dataclasses.dataclass
class TrainResult:
    stack: StageStack
    stages: Dict[int, StageResult]
    run_dir: str


def load_stage_data(manifest: DatasetManifest, T: int, normalize: bool = True,
                    dtype: torch.dtype = torch.float32) -> StageData:
    """
    Network inputs of the train and val splits, each sequence cut to its first T posts.
    """
    def tensors(split: str):
        items = []
        for entry in manifest.split(split):
            seq = load_sequence(manifest.resolve(entry)).truncated(T)
            items.append(sequence_tensors(seq, normalize, dtype))
        return items

    data = StageData(tensors('train'), tensors('val'))
    if not data.train:
        raise NoDataError("no data: the manifest has no train sequences")
    return data


class TrainingRun:
    """
    A run directory and the operations on it.
    """
    def __init__(self, run_dir: Union[str, os.PathLike]):
        self.run_dir = os.fspath(run_dir)
        self.store = JsonFileStorage(self.run_dir)
        self.trace = LossTraceWriter(os.path.join(self.run_dir, LOSS_TRACE))

    def write_setup(self, config: TrainConfig, data_path: Optional[str]):
        self.store.set('config', config.to_dict())
        self.store.set('run', {"data": None if data_path is None else os.path.abspath(data_path)})

    def config(self) -> TrainConfig:
        data = self.store.fetch('config')
        if data is None:
            raise CheckpointError(f"checkpoint error: {self.run_dir} has no config.json")
        return TrainConfig.from_dict(data)

    def data_path(self) -> str:
        data = self.store.fetch('run') or {}
        if not data.get('data'):
            raise ConfigError(f"{self.run_dir} does not record its data manifest")
        return data['data']

    def has_stack(self) -> bool:
        return self.store.exists('stack')

    def _checkpoint(self, stack: StageStack, m: int, every: int):
        rounds = [0]

        def on_validation(state: RunState):
            rounds[0] += 1
            if rounds[0] % every == 0:
                save_stack(stack, self.run_dir, range(m, m + 1))
                save_run_state(state, self.run_dir)

        return on_validation

    def _keep_trace(self, m: int, iteration: int):
        keep = [r for r in self.trace.read() if r['stage'] < m or (r['stage'] == m and r['iter'] <= iteration)]
        self.trace.truncate(keep)

    def run_stage(self, stack: StageStack, m: int, config: TrainConfig, data: StageData,
                  resume: Optional[RunState] = None) -> StageResult:
        """
        Train stage m, checkpointing along the way; the stage is frozen and saved afterwards.
        """
        if resume is not None:
            self._keep_trace(m, resume.iteration)
        else:
            self._keep_trace(m, 0)
        log.info("training stage %d", m, extra={"stage": m, "resume": resume is not None})
        try:
            result = train_stage(stack, m, data, config.schedule(m), resume=resume,
                                 on_iteration=self.trace.write,
                                 on_validation=self._checkpoint(stack, m, config.checkpoint_every))
        except DivergenceError as e:
            self.store.set('divergence', e.diagnostics)
            log.error("%s", e, extra={"stage": m})
            raise
        save_stack(stack, self.run_dir)
        save_run_state(result.state, self.run_dir)
        log.info("stage %d finished after %d iterations, loss %.6g -> %.6g", m, result.iterations,
                 result.first_loss, result.final_loss,
                 extra={"stage": m, "first_loss": result.first_loss, "final_loss": result.final_loss})
        return result


def _build_stage(stack: StageStack, config: TrainConfig, m: int):
    # each stage starts from its own seed so stages built later reproduce those of a single run
    torch.manual_seed(config.seed + m - 1)
    if m == 1:
        stack.stages.clear()
        stack.add_stage(USSENet(config.network))
    else:
        stack.add_stage(config.network)


def train(config: TrainConfig, manifest: Union[DatasetManifest, str, os.PathLike],
          run_dir: Union[str, os.PathLike], upto: Optional[int] = None, resume: bool = False) -> TrainResult:
    """
    Train stages 1..upto (all configured stages by default) into `run_dir`.

    With `resume`, finished stages are loaded and an interrupted stage
    continues from its last checkpoint.
    """
    data_path = None
    if not isinstance(manifest, DatasetManifest):
        data_path = os.fspath(manifest)
        manifest = load_manifest(manifest)
    upto = config.stages if upto is None else upto
    if not 1 <= upto <= config.stages:
        raise ConfigError(f"configuration error: stage {upto} is outside 1..{config.stages}")
    run = TrainingRun(run_dir)
    data = load_stage_data(manifest, config.T, config.network.normalize_input)

    stack = StageStack()
    state = None
    if resume and run.has_stack():
        stack = load_stack(run.run_dir)
        state = load_run_state(run.run_dir)
    else:
        run.write_setup(config, data_path)
        run.trace.truncate([])

    results = {}
    for m in range(1, upto + 1):
        if m <= stack.M and stack.stage(m).frozen:
            continue
        partial = state if state is not None and state.stage == m and not state.finished else None
        if partial is None:
            del stack.stages[m - 1:]
            _build_stage(stack, config, m)
        results[m] = run.run_stage(stack, m, config, data, partial)
    return TrainResult(stack, results, run.run_dir)


def train_stage_in_run(run_dir: Union[str, os.PathLike], m: int,
                       manifest: Optional[Union[DatasetManifest, str, os.PathLike]] = None) -> TrainResult:
    """
    Add and train stage m on top of the frozen stages of an existing run.
    """
    run = TrainingRun(run_dir)
    config = run.config()
    if not 1 <= m <= config.stages:
        raise ConfigError(f"configuration error: stage {m} is outside 1..{config.stages}")
    if manifest is None:
        manifest = run.data_path()
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    data = load_stage_data(manifest, config.T, config.network.normalize_input)
    stack = load_stack(run.run_dir)
    state = load_run_state(run.run_dir)
    if m > stack.M + 1:
        raise ConfigError(f"configuration error: stage {m - 1} has not been trained")
    partial = state if state is not None and state.stage == m and not state.finished else None
    if partial is None:
        del stack.stages[m - 1:]
        _build_stage(stack, config, m)
    result = run.run_stage(stack, m, config, data, partial)
    return TrainResult(stack, {m: result}, run.run_dir)


def loss_trace(run_dir: Union[str, os.PathLike]) -> List[dict]:
    return LossTraceWriter(os.path.join(os.fspath(run_dir), LOSS_TRACE)).read()
