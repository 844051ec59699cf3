# -*- coding: utf-8 -*-

from .config import (
    Ablation,
    NetworkConfig,
)
from .encoder import (
    ResidualDown,
    CACFFEncoder,
    PlainEncoder,
    EncoderFeatures,
)
from .attention import (
    PairAttention,
    TriCrossAttention,
    ConcatFusion,
)
from .decoder import (
    CAFBlock,
    SkipConcatBlock,
    ConvLSTMCell,
    DecoderState,
    Decoder,
)
from .usse import (
    USSENet,
    ForwardOutput,
    forward_tensors,
    usse_forward,
    expected_shapes,
    count_parameters,
)
from .checkpoint import (
    save_network,
    load_network,
    parameter_checksum,
)
