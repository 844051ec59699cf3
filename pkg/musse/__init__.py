# -*- coding: utf-8 -*-

from .version import __version__
from .errors import (
    MusseError,
    ConfigError, ParameterError, StepError, ShapeError,
    FreezeViolationError, InsufficientStagesError,
    DataError, FormatError, InconsistentSequenceError, CorruptDataError,
    StorageIOError, NoDataError,
    DegenerateError, DegenerateFrameError, DegenerateROIError, DegenerateMapError, EmptySupportError,
    CheckpointError, IncompatibleCheckpointError,
    DivergenceError,
)
from .fieldops import (
    DisplacementField, StrainMap, LSQSEConfig,
    warp_bilinear, warp_upsampled, compose_residual,
    lsqse_strain, strain_from_displacement,
)
from .rfdata import (
    RFFrame, RFSequence, ROISpec,
    ManifestEntry, DatasetManifest,
    load_sequence, save_sequence,
    load_manifest, save_manifest,
    load_rois_file, save_rois_file,
    normalize_rf, make_pairs,
)
from .phantom import (
    PulseSpec, Inclusion, PhantomSpec, GroundTruthBundle,
    simulate_sequence, random_phantom_spec, default_rois, build_phantom_dataset,
)
from .losses import (
    PatchSpec, LossWeights, LossConfig, LossBreakdown,
    lncc, similarity_loss, consistency_loss, smoothness_loss, total_loss, compute_losses,
)
from .net import (
    Ablation, NetworkConfig,
    USSENet, ForwardOutput, usse_forward,
)
from .multistage import (
    StageStack, StageOutput, MOptDecision,
    musse_forward, select_m_opt, train_stage,
)
from .metrics import (
    snr_target, snr_background, snr_e, cnr, nrmse,
    MetricsReport, evaluate_pairwise,
)
from .config import (
    PlateauPolicy, TrainConfig,
    LadderRung, ablation_ladder,
)
from .checkpoint import (
    checkpoint_save, checkpoint_load,
    save_stack, load_stack,
)
from .training import (
    TrainingRun, train, train_stage_in_run,
)
from .evaluation import evaluate
from .inference import infer, strain_image
