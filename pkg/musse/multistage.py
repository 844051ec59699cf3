# -*- coding: utf-8 -*-

"""
Residual multi-stage refinement.

Stage m estimates a residual displacement between the reference frame and
the post frame warped by the stages before it; the composed displacement of
stage m is the previous one plus that residual. Stages are trained one at a
time with every earlier stage frozen.
"""

from typing import (
    Any, Callable, Dict, List,
    NamedTuple, Optional, Sequence,
    Tuple, Union,
)
import math
import dataclasses
import logging
import warnings
import torch
from torch.nn.utils import clip_grad_norm_
from torch.optim.lr_scheduler import ReduceLROnPlateau
from .errors import (
    ConfigError, DivergenceError,
    FreezeViolationError, InsufficientStagesError,
    NoDataError,
)
from .fieldops import (
    DisplacementField, StrainMap,
    compose_residual, lsqse_strain, maxabs_scale,
    mean_abs_difference, warp_upsampled,
)
from .losses import LossBreakdown, LossConfig, compute_losses
from .net import NetworkConfig, USSENet, parameter_checksum
from .net.usse import parameter_dtype
from .rfdata import RFSequence, sequence_tensors

log = logging.getLogger(__name__)

# (pre, [post_1 .. post_T]), each (1, 1, H, W)
SequenceTensors = Tuple[torch.Tensor, List[torch.Tensor]]


@dataclasses.dataclass
class Stage:
    model: USSENet
    frozen: bool = False

    @property
    def cfg(self) -> NetworkConfig:
        return self.model.cfg


class StageStack:
    """
    Ordered stages; stage indices are 1-based.
    """
    def __init__(self, stages: Sequence[Stage] = ()):
        self.stages = list(stages)

    @classmethod
    def build(cls, cfg: NetworkConfig, M: int = 1) -> 'StageStack':
        if M < 1:
            raise ConfigError(f"configuration error: a stack needs at least one stage, got M={M}")
        return cls([Stage(USSENet(cfg)) for _ in range(M)])

    @property
    def M(self) -> int:
        return len(self.stages)

    def __len__(self):
        return self.M

    def stage(self, m: int) -> Stage:
        if not 1 <= m <= self.M:
            raise ConfigError(f"configuration error: stage {m} is outside 1..{self.M}")
        return self.stages[m - 1]

    def model(self, m: int) -> USSENet:
        return self.stage(m).model

    def add_stage(self, model: Union[USSENet, NetworkConfig, None] = None) -> Stage:
        """
        Append a stage; by default it copies the configuration of the last stage.
        """
        if model is None:
            if not self.stages:
                raise ConfigError("configuration error: no configuration for the first stage")
            model = self.stages[-1].cfg
        if isinstance(model, NetworkConfig):
            model = USSENet(model)
        if self.stages:
            model = model.to(parameter_dtype(self.stages[0].model))
        stage = Stage(model)
        self.stages.append(stage)
        return stage

    def freeze(self, m: int):
        stage = self.stage(m)
        for p in stage.model.parameters():
            p.requires_grad_(False)
        stage.model.eval()
        stage.frozen = True

    def unfreeze(self, m: int):
        stage = self.stage(m)
        for p in stage.model.parameters():
            p.requires_grad_(True)
        stage.model.train()
        stage.frozen = False

    def checksum(self, m: int) -> str:
        return parameter_checksum(self.model(m))

    def to(self, dtype: torch.dtype) -> 'StageStack':
        for stage in self.stages:
            stage.model.to(dtype)
        return self

    @property
    def cfg(self) -> NetworkConfig:
        if not self.stages:
            raise ConfigError("configuration error: empty stage stack")
        return self.stages[0].cfg


@dataclasses.dataclass
class StageOutput:
    """
    Outputs indexed ``[m - 1][t - 1]``, each a (B, C, H, W) tensor.
    """
    displacements: List[List[torch.Tensor]]
    residuals: List[List[torch.Tensor]]
    strains: List[List[torch.Tensor]]
    # post frames warped by the composed displacement of each stage
    warped: List[List[torch.Tensor]]

    @property
    def M(self) -> int:
        return len(self.displacements)

    def fields(self, m: Optional[int] = None) -> List[DisplacementField]:
        m = self.M if m is None else m
        return [DisplacementField.from_tensor(d) for d in self.displacements[m - 1]]

    def strain_maps(self, m: Optional[int] = None) -> List[StrainMap]:
        m = self.M if m is None else m
        return [StrainMap.from_tensor(z) for z in self.strains[m - 1]]


def musse_forward_tensors(stack: StageStack, pre: torch.Tensor, posts: Sequence[torch.Tensor],
                          upto: Optional[int] = None) -> StageOutput:
    """
    Run stages 1..upto on normalized frames.

    Stage 1 reads the raw posts; stage m > 1 reads the maxabs-renormalized
    frames warped by stage m - 1. Warping always starts from the raw posts.
    Frozen stages run without autograd.
    """
    if stack.M == 0:
        raise ConfigError("configuration error: empty stage stack")
    upto = stack.M if upto is None else upto
    if not 1 <= upto <= stack.M:
        raise ConfigError(f"configuration error: stage {upto} is outside 1..{stack.M}")
    posts = list(posts)
    inputs = posts
    base = [p.new_zeros((p.shape[0], 2, *p.shape[-2:])) for p in posts]
    out = StageOutput([], [], [], [])
    for m in range(1, upto + 1):
        stage = stack.stage(m)
        cfg = stage.cfg
        with torch.set_grad_enabled(torch.is_grad_enabled() and not stage.frozen):
            residuals, _ = stage.model.estimate(pre, inputs)
            composed = [compose_residual(b, r) for b, r in zip(base, residuals)]
            warped = [warp_upsampled(p, d, cfg.upsample_factor) for p, d in zip(posts, composed)]
            strains = [lsqse_strain(d[:, :1], cfg.lsqse) for d in composed]
        out.displacements.append(composed)
        out.residuals.append(residuals)
        out.strains.append(strains)
        out.warped.append(warped)
        base = composed
        inputs = [maxabs_scale(w.detach()) for w in warped]
    return out


def musse_forward(stack: StageStack, seq: RFSequence, upto: Optional[int] = None) -> StageOutput:
    if stack.M == 0:
        raise ConfigError("configuration error: empty stage stack")
    cfg = stack.cfg
    cfg.check_input(*seq.shape)
    pre, posts = sequence_tensors(seq, cfg.normalize_input, parameter_dtype(stack.model(1)))
    return musse_forward_tensors(stack, pre, posts, upto)


def stage_differences(output: StageOutput) -> List[List[float]]:
    """
    Mean absolute displacement change between consecutive stages, per time step.
    Entry ``[m - 2][t - 1]`` compares stage m with stage m - 1.
    """
    return [
        [mean_abs_difference([a], [b]) for a, b in zip(output.displacements[m], output.displacements[m - 1])]
        for m in range(1, output.M)
    ]


class MOptDecision(NamedTuple):
    m_opt: int
    converged: bool
    # relative change of stage m against m - 1, for m = 2..M
    diffs: List[float]


def select_m_opt(per_stage_disps: Sequence[Sequence[Union[DisplacementField, torch.Tensor]]],
                 tau_rel: float = 0.01, eps: float = 1e-12) -> MOptDecision:
    """
    The first stage whose displacement differs from its predecessor by less
    than `tau_rel`, relative to its mean magnitude.
    Falls back to the last stage with a warning.
    """
    if len(per_stage_disps) < 2:
        raise InsufficientStagesError("insufficient stages: stage selection needs at least two stages")

    def tensors(fields):
        return [f.tensor(torch.float64) if isinstance(f, DisplacementField) else f.double() for f in fields]

    stages = [tensors(fields) for fields in per_stage_disps]
    diffs = []
    for m in range(1, len(stages)):
        change = mean_abs_difference(stages[m], stages[m - 1])
        magnitude = mean_abs_difference(stages[m], [torch.zeros_like(x) for x in stages[m]])
        diffs.append(change / max(magnitude, eps))
    for m, diff in enumerate(diffs, 2):
        if diff < tau_rel:
            return MOptDecision(m, True, diffs)
    warnings.warn(f"stage displacements did not settle below tau_rel={tau_rel}, using M={len(stages)}")
    return MOptDecision(len(stages), False, diffs)


@dataclasses.dataclass
class StageSchedule:
    """
    Optimization settings of one stage.

    Training stops after `epochs` passes or `max_iterations` updates,
    whichever comes first. The plateau policy is evaluated every
    `validate_every` iterations, by default once per epoch.
    """
    epochs: int = 1
    max_iterations: Optional[int] = None
    learning_rate: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-5
    clip_norm: float = 10.0
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    validate_every: Optional[int] = None
    shuffle: bool = True
    seed: int = 0
    loss: LossConfig = LossConfig()

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("configuration error: learning rate must be positive")
        if self.epochs < 1:
            raise ConfigError("configuration error: epochs must be at least 1")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError("configuration error: max_iterations must be at least 1")
        if self.plateau_patience < 1:
            raise ConfigError("configuration error: plateau patience must be at least 1")


@dataclasses.dataclass
class StageData:
    train: List[SequenceTensors]
    val: List[SequenceTensors] = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class RunState:
    """
    Resumable position of a stage's training loop.
    """
    stage: int
    epoch: int = 0
    iteration: int = 0
    best_val_loss: float = float('inf')
    optimizer: Optional[Dict[str, Any]] = None
    scheduler: Optional[Dict[str, Any]] = None
    rng: Optional[torch.Tensor] = None
    finished: bool = False
    # training losses of the current epoch so far
    epoch_losses: List[float] = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class StageResult:
    stage: int
    iterations: int
    first_loss: float
    final_loss: float
    # mean training loss of the last epoch
    last_epoch_loss: float
    state: RunState


def make_optimizer(model: USSENet, schedule: StageSchedule) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=schedule.learning_rate,
                            betas=tuple(schedule.betas), eps=schedule.adam_eps)


def make_scheduler(optimizer: torch.optim.Optimizer, schedule: StageSchedule) -> ReduceLROnPlateau:
    """
    Plateau schedule that reduces the rate on the `plateau_patience`-th
    consecutive evaluation without improvement.
    """
    # torch reduces once the bad count exceeds its patience
    return ReduceLROnPlateau(optimizer, mode='min', factor=schedule.plateau_factor,
                             patience=schedule.plateau_patience - 1, min_lr=schedule.min_lr)


def stage_losses(stack: StageStack, m: int, data: SequenceTensors, loss: LossConfig) -> LossBreakdown:
    """
    Training loss of stage m on one sequence, against the original reference frame.
    """
    pre, posts = data
    out = musse_forward_tensors(stack, pre, posts, upto=m)
    return compute_losses(pre, out.warped[m - 1], out.strains[m - 1], out.displacements[m - 1], loss)


def mean_stage_loss(stack: StageStack, m: int, data: Sequence[SequenceTensors], loss: LossConfig) -> float:
    with torch.no_grad():
        values = [float(stage_losses(stack, m, item, loss).l_total) for item in data]
    return sum(values) / len(values)


def _epoch_order(n: int, epoch: int, schedule: StageSchedule) -> List[int]:
    if not schedule.shuffle:
        return list(range(n))
    generator = torch.Generator().manual_seed(schedule.seed * 100003 + epoch)
    return torch.randperm(n, generator=generator).tolist()


def _diagnostics(model: USSENet, m: int, iteration: int, breakdown: LossBreakdown, lr: float) -> Dict[str, Any]:
    norms = {name: float(p.detach().norm()) for name, p in model.named_parameters()}
    return {
        "stage": m,
        "iter": iteration,
        "lr": lr,
        "losses": breakdown.scalars(),
        "non_finite_parameters": sorted(name for name, v in norms.items() if not math.isfinite(v)),
        "parameter_norms": norms,
    }


def train_stage(stack: StageStack, m: int, data: StageData, schedule: StageSchedule = StageSchedule(),
                resume: Optional[RunState] = None,
                on_iteration: Optional[Callable[[Dict[str, Any]], None]] = None,
                on_validation: Optional[Callable[[RunState], None]] = None) -> StageResult:
    """
    Optimize stage m with every earlier stage frozen.

    :param resume:          loop state of an interrupted run of the same stage
    :param on_iteration:    receives one loss record per update
    :param on_validation:   receives the loop state after every plateau step
    """
    if not 1 <= m <= stack.M:
        raise ConfigError(f"configuration error: stage {m} does not exist in a stack of {stack.M}")
    for k in range(1, m):
        if not stack.stage(k).frozen:
            raise FreezeViolationError(f"freeze violation: stage {k} must be frozen before training stage {m}")
    if not data.train:
        raise NoDataError("no data: the training split is empty")
    frozen_before = {k: stack.checksum(k) for k in range(1, m)}

    stack.unfreeze(m)
    model = stack.model(m)
    optimizer = make_optimizer(model, schedule)
    scheduler = make_scheduler(optimizer, schedule)
    state = resume if resume is not None else RunState(stage=m)
    if resume is not None:
        if resume.stage != m:
            raise ConfigError(f"configuration error: resume state is for stage {resume.stage}, not {m}")
        if resume.optimizer is not None:
            optimizer.load_state_dict(resume.optimizer)
        if resume.scheduler is not None:
            scheduler.load_state_dict(resume.scheduler)
        if resume.rng is not None:
            torch.set_rng_state(resume.rng)

    n = len(data.train)
    validate_every = schedule.validate_every or n
    limit = schedule.epochs * n
    if schedule.max_iterations is not None:
        limit = min(limit, schedule.max_iterations)

    first_loss = None
    final_loss = float('nan')
    while state.iteration < limit:
        epoch, position = divmod(state.iteration, n)
        state.epoch = epoch
        if position == 0:
            state.epoch_losses = []
        index = _epoch_order(n, epoch, schedule)[position]
        breakdown = stage_losses(stack, m, data.train[index], schedule.loss)
        lr = optimizer.param_groups[0]['lr']
        if not torch.isfinite(breakdown.l_total):
            raise DivergenceError(f"divergence: non-finite loss at stage {m}, iteration {state.iteration + 1}",
                                  _diagnostics(model, m, state.iteration + 1, breakdown, lr))
        optimizer.zero_grad()
        breakdown.l_total.backward()
        clip_grad_norm_(model.parameters(), schedule.clip_norm)
        optimizer.step()
        state.iteration += 1

        loss_value = float(breakdown.l_total.detach())
        first_loss = loss_value if first_loss is None else first_loss
        final_loss = loss_value
        state.epoch_losses.append(loss_value)
        if on_iteration is not None:
            on_iteration({"iter": state.iteration, "stage": m, "epoch": epoch, "lr": lr, **breakdown.scalars()})

        if state.iteration % validate_every == 0 or state.iteration == limit:
            if data.val:
                val_loss = mean_stage_loss(stack, m, data.val, schedule.loss)
            else:
                val_loss = sum(state.epoch_losses) / len(state.epoch_losses)
            scheduler.step(val_loss)
            state.best_val_loss = min(state.best_val_loss, val_loss)
            state.optimizer = optimizer.state_dict()
            state.scheduler = scheduler.state_dict()
            state.rng = torch.get_rng_state()
            log.info("stage %d iteration %d: validation loss %.6g", m, state.iteration, val_loss,
                     extra={"stage": m, "iter": state.iteration, "val_loss": val_loss,
                            "lr": optimizer.param_groups[0]['lr']})
            if on_validation is not None:
                on_validation(state)

    state.finished = True
    stack.freeze(m)
    for k, checksum in frozen_before.items():
        if stack.checksum(k) != checksum:
            raise FreezeViolationError(f"freeze violation: parameters of stage {k} changed while training stage {m}")
    last_epoch = sum(state.epoch_losses) / len(state.epoch_losses) if state.epoch_losses else float('nan')
    return StageResult(m, state.iteration, first_loss if first_loss is not None else float('nan'),
                       final_loss, last_epoch, state)
