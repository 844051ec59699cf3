# -*- coding: utf-8 -*-

"""
Training configuration.
"""

from typing import Any, Dict, List, Optional, Union
import os
import dataclasses
from .errors import ConfigError
from .losses import LossConfig
from .multistage import StageSchedule
from .net import Ablation, NetworkConfig, USSENet, count_parameters
from .storage import JsonFileStorage


@dataclasses.dataclass(frozen=True)
class PlateauPolicy:
    factor: float = 0.5
    patience: int = 10
    min_lr: float = 1e-5

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ConfigError(f"plateau factor must lie in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ConfigError(f"plateau patience must be at least 1, got {self.patience}")
        if self.min_lr < 0:
            raise ConfigError("plateau min_lr must be non-negative")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """
    :param epochs_stage1:   passes over the training split for the first stage
    :param epochs_stage2:   passes for every later stage
    :param max_iterations:  optional cap on updates per stage
    :param stages:          number of stages M
    :param checkpoint_every: validation rounds between run checkpoints
    """
    learning_rate: float = 1e-3
    lr_policy: PlateauPolicy = PlateauPolicy()
    epochs_stage1: int = 150
    epochs_stage2: int = 100
    max_iterations: Optional[int] = None
    batch_size: int = 1
    T: int = 9
    seed: int = 0
    loss: LossConfig = LossConfig()
    network: NetworkConfig = NetworkConfig(T=9)
    stages: int = 2
    clip_norm: float = 10.0
    validate_every: Optional[int] = None
    shuffle: bool = True
    checkpoint_every: int = 1
    tau_rel: float = 0.01

    def __post_init__(self):
        if self.batch_size != 1:
            raise ConfigError(f"batch_size must be 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.stages < 1:
            raise ConfigError(f"at least one stage is needed, got {self.stages}")
        if self.epochs_stage1 < 1 or self.epochs_stage2 < 1:
            raise ConfigError("epochs must be at least 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be at least 1")
        if self.network.T != self.T:
            raise ConfigError(f"network T={self.network.T} differs from T={self.T}")

    @classmethod
    def desk(cls, **changes) -> 'TrainConfig':
        """
        Laptop-scale preset: 64x64 frames, T=3, C=8, 200 updates per stage.
        """
        base = cls(T=3, network=NetworkConfig(T=3, base_channels=8), epochs_stage1=200, epochs_stage2=200,
                   max_iterations=200)
        return dataclasses.replace(base, **changes)

    @classmethod
    def full(cls, **changes) -> 'TrainConfig':
        """
        Full-scale preset: T=9, 150 epochs for the first stage and 100 for the second.
        """
        return dataclasses.replace(cls(), **changes)

    def epochs(self, stage: int) -> int:
        return self.epochs_stage1 if stage == 1 else self.epochs_stage2

    def schedule(self, stage: int) -> StageSchedule:
        return StageSchedule(
            epochs=self.epochs(stage),
            max_iterations=self.max_iterations,
            learning_rate=self.learning_rate,
            plateau_factor=self.lr_policy.factor,
            plateau_patience=self.lr_policy.patience,
            min_lr=self.lr_policy.min_lr,
            clip_norm=self.clip_norm,
            validate_every=self.validate_every,
            shuffle=self.shuffle,
            seed=self.seed + stage - 1,
            loss=self.loss,
        )

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        try:
            if 'lr_policy' in data:
                data['lr_policy'] = PlateauPolicy(**data['lr_policy'])
            if 'loss' in data:
                data['loss'] = LossConfig.from_dict(data['loss'])
            if 'network' in data:
                data['network'] = NetworkConfig.from_dict(data['network'])
            elif 'T' in data:
                data['network'] = NetworkConfig(T=data['T'])
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"bad config: {e}") from e

    @classmethod
    def from_json(cls, path: Union[str, os.PathLike]) -> 'TrainConfig':
        root, name = os.path.split(os.path.abspath(os.fspath(path)))
        data = JsonFileStorage(root, suf='').fetch(name)
        if data is None:
            raise ConfigError(f"config file {path} not found")
        return cls.from_dict(data)

    def save(self, path: Union[str, os.PathLike]):
        root, name = os.path.split(os.path.abspath(os.fspath(path)))
        JsonFileStorage(root, suf='').set(name, self.to_dict())


@dataclasses.dataclass(frozen=True)
class LadderRung:
    name: str
    network: NetworkConfig
    stages: int = 1

    def parameter_count(self) -> int:
        """
        Trainable parameters of the whole stack.
        """
        return self.stages * count_parameters(USSENet(self.network))

    def train_config(self, base: TrainConfig) -> TrainConfig:
        return dataclasses.replace(base, network=self.network.replace(T=base.T), stages=self.stages)


def ablation_ladder(base: NetworkConfig) -> List[LadderRung]:
    """
    Component ladder from the plain network to the two-stage stack:
    baseline, cross-attentive encoder and bottleneck, fusion decoder, second stage.
    """
    return [
        LadderRung('baseline', base.replace(ablation=Ablation(False, False, False))),
        LadderRung('+CACFF/TCA', base.replace(ablation=Ablation(True, True, False))),
        LadderRung('USSE-Net', base.replace(ablation=Ablation(True, True, True))),
        LadderRung('MUSSE-Net', base.replace(ablation=Ablation(True, True, True)), stages=2),
    ]
