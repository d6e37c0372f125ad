"""Co-training of a deterministic task branch and a conditional diffusion
branch over a shared recurrent encoder, for online workflow anticipation and
phase recognition."""

__version__ = "0.1.0"

from .data import Dataset, DataFormatError, emit_dataset, ingest_dataset
from .diffusion import (
    DenoiserConfig,
    DiffusionSchedule,
    ancestral_sample,
    ddim_sample,
    ddpm_loss,
    make_schedule,
    predict_x0,
    q_sample,
)
from .encoder import ConditionalEncoder, EncoderConfig, TemporalState
from .heads import TaskHead, TaskHeadConfig, task_loss
from .metrics import anticipation_metrics, recognition_metrics, smooth_metric
from .model import ModelDims, TrainConfig, WorkflowModel, build_model
from .synth import PhaseVariant, ProcedureGrammar, ToolTemplate, sample_procedure
from .training import fit, load_checkpoint, lr_schedule, save_checkpoint, train_step
from .workflow import (
    AnticipationLabel,
    LabelWindow,
    PhaseLabel,
    Presence,
    WorkflowTimeline,
    build_target_window,
    presence_labels,
    remaining_time_labels,
)

__all__ = [name for name in dir() if not name.startswith("_")]
