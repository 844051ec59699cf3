# -*- coding: utf-8 -*-

"""
Run directory checkpoints.

::

    RUN/stack.json              stage directories and freeze flags
    RUN/stage_1/ ...            network checkpoint of every stage
    RUN/state/run_state.json    loop position, scheduler and optimizer layout
    RUN/state/optimizer/*.f32   optimizer moment estimates
    RUN/state/rng.bin           torch random generator state
"""

from typing import Any, Dict, Optional, Tuple, Union
import os
import math
import logging
import numpy as np
import torch
from .errors import CheckpointError, IncompatibleCheckpointError
from .multistage import RunState, Stage, StageStack
from .net import load_network, save_network
from .storage import BinaryFileStorage, Float32BlobStorage, JsonFileStorage

log = logging.getLogger(__name__)

STACK_FORMAT_VERSION = 1
RUN_STATE_FORMAT_VERSION = 1


def stage_dir(m: int) -> str:
    return f"stage_{m}"


def save_stack(stack: StageStack, run_dir: Union[str, os.PathLike], stages: Optional[range] = None):
    """
    Write the stack file and the networks of `stages` (all by default).
    """
    run_dir = os.fspath(run_dir)
    for m in stages or range(1, stack.M + 1):
        save_network(stack.model(m), os.path.join(run_dir, stage_dir(m)))
    JsonFileStorage(run_dir).set('stack', {
        "format_version": STACK_FORMAT_VERSION,
        "stages": [{"dir": stage_dir(m), "frozen": stack.stage(m).frozen} for m in range(1, stack.M + 1)],
    })


def load_stack(run_dir: Union[str, os.PathLike], dtype: torch.dtype = torch.float32) -> StageStack:
    run_dir = os.fspath(run_dir)
    data = JsonFileStorage(run_dir).fetch('stack')
    if data is None:
        raise CheckpointError(f"checkpoint error: {run_dir} has no stack.json")
    if data.get('format_version') != STACK_FORMAT_VERSION:
        raise IncompatibleCheckpointError(f"incompatible checkpoint: stack version {data.get('format_version')}")
    stack = StageStack()
    for m, item in enumerate(data['stages'], 1):
        stack.stages.append(Stage(load_network(os.path.join(run_dir, item['dir']), dtype)))
        if item.get('frozen'):
            stack.freeze(m)
        else:
            stack.unfreeze(m)
    return stack


def _jsonable(value: Any) -> Any:
    if torch.is_tensor(value):
        return value.item() if value.dim() == 0 else value.tolist()
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _save_optimizer(state: Dict[str, Any], blobs: Float32BlobStorage) -> Dict[str, Any]:
    layout: Dict[str, Any] = {"param_groups": _jsonable(state['param_groups']), "state": {}}
    for idx, entries in state['state'].items():
        item = {}
        for key, value in entries.items():
            if torch.is_tensor(value) and value.dim() > 0:
                blob_key = f"optimizer/{idx}.{key}"
                blobs.set(blob_key, value.detach().cpu().numpy())
                item[key] = {"blob": blob_key, "shape": list(value.shape)}
            else:
                item[key] = float(value)
        layout["state"][str(idx)] = item
    return layout


def _load_optimizer(layout: Dict[str, Any], blobs: Float32BlobStorage) -> Dict[str, Any]:
    groups = []
    for group in layout['param_groups']:
        group = dict(group)
        if 'betas' in group:
            group['betas'] = tuple(group['betas'])
        groups.append(group)
    state = {}
    for idx, entries in layout['state'].items():
        item = {}
        for key, value in entries.items():
            if isinstance(value, dict):
                array = blobs.fetch(value['blob'], shape=value['shape'])
                if array is None:
                    raise CheckpointError(f"checkpoint error: optimizer blob {value['blob']} is missing")
                item[key] = torch.from_numpy(array)
            else:
                item[key] = torch.tensor(value, dtype=torch.float32)
        state[int(idx)] = item
    return {"state": state, "param_groups": groups}


def save_run_state(state: RunState, run_dir: Union[str, os.PathLike]):
    root = os.path.join(os.fspath(run_dir), 'state')
    blobs = Float32BlobStorage(root)
    for key in blobs.keys():
        if key.startswith('optimizer/'):
            blobs.pop(key)
    data = {
        "format_version": RUN_STATE_FORMAT_VERSION,
        "stage": state.stage,
        "epoch": state.epoch,
        "iteration": state.iteration,
        "best_val_loss": state.best_val_loss if math.isfinite(state.best_val_loss) else None,
        "finished": state.finished,
        "epoch_losses": list(state.epoch_losses),
        "optimizer": None if state.optimizer is None else _save_optimizer(state.optimizer, blobs),
        "scheduler": None if state.scheduler is None else _jsonable(state.scheduler),
    }
    if state.rng is not None:
        BinaryFileStorage(root, '.bin').set('rng', state.rng.numpy().tobytes())
    JsonFileStorage(root).set('run_state', data)


def load_run_state(run_dir: Union[str, os.PathLike]) -> Optional[RunState]:
    """
    The saved loop state, or None when the run has none.
    """
    root = os.path.join(os.fspath(run_dir), 'state')
    data = JsonFileStorage(root).fetch('run_state')
    if data is None:
        return None
    if data.get('format_version') != RUN_STATE_FORMAT_VERSION:
        raise IncompatibleCheckpointError(f"incompatible checkpoint: run state version {data.get('format_version')}")
    raw = BinaryFileStorage(root, '.bin').fetch('rng')
    best = data.get('best_val_loss')
    return RunState(
        stage=int(data['stage']),
        epoch=int(data['epoch']),
        iteration=int(data['iteration']),
        best_val_loss=float('inf') if best is None else float(best),
        optimizer=None if data['optimizer'] is None else _load_optimizer(data['optimizer'], Float32BlobStorage(root)),
        scheduler=data['scheduler'],
        rng=None if raw is None else torch.from_numpy(np.frombuffer(raw, dtype=np.uint8).copy()),
        finished=bool(data.get('finished', False)),
        epoch_losses=[float(x) for x in data.get('epoch_losses', [])],
    )


def checkpoint_save(stack: StageStack, state: Optional[RunState], path: Union[str, os.PathLike]):
    save_stack(stack, path)
    if state is not None:
        save_run_state(state, path)
    log.debug("checkpoint written to %s", os.fspath(path))


def checkpoint_load(path: Union[str, os.PathLike],
                    dtype: torch.dtype = torch.float32) -> Tuple[StageStack, Optional[RunState]]:
    return load_stack(path, dtype), load_run_state(path)
