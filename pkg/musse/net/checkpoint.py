# -*- coding: utf-8 -*-

"""
Network parameter checkpoints.

A checkpoint directory holds ``arch.json`` with the network configuration
and the parameter table, and one float32 blob per parameter named by its
dotted path, e.g. ``encoder.shared.blocks.0.conv1.weight.f32``.
"""

from typing import Any, Dict, List, Union
import os
import hashlib
import logging
import numpy as np
import torch
from ..errors import CheckpointError, IncompatibleCheckpointError, FormatError
from ..storage import Float32BlobStorage, JsonFileStorage
from .config import NetworkConfig
from .usse import USSENet

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def parameter_table(model: USSENet) -> List[List[Any]]:
    return [[name, list(p.shape)] for name, p in model.named_parameters()]


def parameter_checksum(model: USSENet) -> str:
    """
    sha256 over the float32 bytes of every parameter, in table order.
    """
    digest = hashlib.sha256()
    for name, p in model.named_parameters():
        digest.update(name.encode('utf-8'))
        digest.update(np.ascontiguousarray(p.detach().cpu().numpy(), dtype='<f4').tobytes())
    return digest.hexdigest()


def save_network(model: USSENet, path: Union[str, os.PathLike]):
    path = os.fspath(path)
    blobs = Float32BlobStorage(path)
    for name, p in model.named_parameters():
        blobs.set(name, p.detach().cpu().numpy())
    arch = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "parameters": parameter_table(model),
    }
    JsonFileStorage(path).set('arch', arch)
    log.debug("network saved to %s", path)


def read_arch(path: Union[str, os.PathLike]) -> Dict[str, Any]:
    path = os.fspath(path)
    try:
        arch = JsonFileStorage(path).fetch('arch')
    except FormatError as e:
        raise CheckpointError(f"checkpoint error: {e}") from e
    if arch is None:
        raise CheckpointError(f"checkpoint error: {path} has no arch.json")
    version = arch.get('format_version')
    if version != CHECKPOINT_FORMAT_VERSION:
        raise IncompatibleCheckpointError(f"incompatible checkpoint: format version {version}")
    return arch


def load_network(path: Union[str, os.PathLike], dtype: torch.dtype = torch.float32) -> USSENet:
    """
    Rebuild a network from its checkpoint.
    The stored parameter table must match the configured architecture exactly.
    """
    path = os.fspath(path)
    arch = read_arch(path)
    model = USSENet(NetworkConfig.from_dict(arch['config']))
    expected = parameter_table(model)
    if arch.get('parameters') != expected:
        raise IncompatibleCheckpointError(f"incompatible checkpoint: parameter table of {path} does not match")
    blobs = Float32BlobStorage(path)
    with torch.no_grad():
        for name, p in model.named_parameters():
            try:
                value = blobs.fetch(name, shape=tuple(p.shape))
            except FormatError as e:
                raise IncompatibleCheckpointError(f"incompatible checkpoint: {e}") from e
            if value is None:
                raise CheckpointError(f"checkpoint error: {path} misses parameter {name}")
            p.copy_(torch.from_numpy(value))
    return model.to(dtype)
