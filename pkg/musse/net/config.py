# -*- coding: utf-8 -*-

from typing import Any, Dict, Optional, Tuple
import dataclasses
from ..errors import ConfigError, ShapeError
from ..fieldops import LSQSEConfig


@dataclasses.dataclass(frozen=True)
class Ablation:
    """
    Switches for the three fusion components.
    Cross attention at the bottleneck needs the three-stream encoder.
    """
    use_cacff: bool = True
    use_tca: bool = True
    use_caf: bool = True

    def __post_init__(self):
        if self.use_tca and not self.use_cacff:
            raise ConfigError("tri-cross attention needs the three-stream encoder (use_cacff)")


@dataclasses.dataclass(frozen=True)
class NetworkConfig:
    """
    :param levels:          number of residual downsampling blocks
    :param base_channels:   channels of the first level, doubled at every level
    :param T:               post frames per sequence
    :param lstm_hidden:     hidden channels of the first decoder level, doubled
                            at every level; None uses the encoder channels
    :param upsample_factor: grid refinement of the warping step
    :param lsqse_window:    window length of the strain estimator
    :param normalize_input: maxabs-normalize frames before the network
    """
    levels: int = 4
    base_channels: int = 8
    T: int = 3
    lstm_hidden: Optional[int] = None
    upsample_factor: int = 4
    ablation: Ablation = Ablation()
    lsqse_window: int = 15
    normalize_input: bool = True

    def __post_init__(self):
        if isinstance(self.ablation, dict):
            object.__setattr__(self, 'ablation', Ablation(**self.ablation))
        if self.levels < 2:
            raise ConfigError(f"levels must be at least 2, got {self.levels}")
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be at least 4, got {self.base_channels}")
        if self.T < 1:
            raise ConfigError(f"T must be at least 1, got {self.T}")
        if self.lstm_hidden is not None and self.lstm_hidden < 1:
            raise ConfigError(f"lstm_hidden must be positive, got {self.lstm_hidden}")
        if not isinstance(self.upsample_factor, int) or self.upsample_factor < 1:
            raise ConfigError(f"upsample_factor must be a positive integer, got {self.upsample_factor}")
        LSQSEConfig(self.lsqse_window)

    @property
    def lsqse(self) -> LSQSEConfig:
        return LSQSEConfig(self.lsqse_window)

    def channels(self, level: int) -> int:
        """
        Encoder channels at `level`, 1-based.
        """
        return self.base_channels * 2 ** (level - 1)

    def hidden(self, level: int) -> int:
        return (self.lstm_hidden or self.base_channels) * 2 ** (level - 1)

    def check_input(self, height: int, width: int):
        factor = 2 ** self.levels
        if height % factor or width % factor:
            raise ShapeError(f"shape error: {height}x{width} is not divisible by {factor}")
        self.lsqse.check(height)

    def replace(self, **changes) -> 'NetworkConfig':
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'NetworkConfig':
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown network keys: {sorted(unknown)}")
        data = dict(data)
        if 'ablation' in data:
            flags = data['ablation']
            if not isinstance(flags, Ablation):
                extra = set(flags) - {f.name for f in dataclasses.fields(Ablation)}
                if extra:
                    raise ConfigError(f"unknown ablation keys: {sorted(extra)}")
                data['ablation'] = Ablation(**flags)
        return cls(**data)


def level_shape(height: int, width: int, level: int) -> Tuple[int, int]:
    return height // 2 ** level, width // 2 ** level
