"""Inference paths for both branches.

The task path streams a video through the encoder once and reads the linear
head per frame; it never touches the denoiser, which is what makes the
co-trained model real-time. The stochastic path exists for diagnostics and
ablations: it samples the label window per frame with the accelerated
sampler and decodes the anchor row.
"""

from __future__ import annotations

import numpy as np
import torch

from .diffusion import DiffusionSchedule, ddim_sample
from .model import TrainConfig, WorkflowModel
from .training import LabeledVideo
from .workflow import decode_remaining


@torch.no_grad()
def stream_features(model: WorkflowModel, obs: torch.Tensor) -> torch.Tensor:
    features, _ = model.encoder.encode_clip(obs)
    return features


@torch.no_grad()
def task_predict_anticipation(
    model: WorkflowModel, video: LabeledVideo, horizon: float
) -> np.ndarray:
    """Task-branch remaining-time predictions in minutes, shape (T, channels)."""
    features = stream_features(model, video.obs)
    outputs = model.head(features)
    normalized = torch.clamp(outputs.remaining, 0.0, 1.0)
    return normalized.numpy() * horizon


@torch.no_grad()
def task_predict_phases(model: WorkflowModel, video: LabeledVideo) -> np.ndarray:
    features = stream_features(model, video.obs)
    logits = model.head(features)
    return logits.argmax(dim=-1).numpy()


@torch.no_grad()
def ddim_sample_windows(
    model: WorkflowModel,
    video: LabeledVideo,
    sched: DiffusionSchedule,
    steps: int = 16,
    seed: int = 0,
    eta: float = 0.0,
    features: torch.Tensor | None = None,
) -> torch.Tensor:
    """One sampled label window per frame, shape (T, channels, lam)."""
    if features is None:
        features = stream_features(model, video.obs)
    lam = model.denoiser.cfg.lam
    channels = model.denoiser.cfg.channels
    gen = torch.Generator()
    gen.manual_seed(seed)
    shape = (video.num_frames, channels, lam)
    return ddim_sample(model.denoiser, features, sched, shape, gen, steps=steps, eta=eta)


@torch.no_grad()
def ddim_predict_anticipation(
    model: WorkflowModel,
    video: LabeledVideo,
    sched: DiffusionSchedule,
    horizon: float,
    steps: int = 16,
    seed: int = 0,
    eta: float = 0.0,
    features: torch.Tensor | None = None,
) -> np.ndarray:
    """Stochastic-branch predictions in minutes: decode each anchor row."""
    windows = ddim_sample_windows(model, video, sched, steps, seed, eta, features)
    anchor = windows[:, :, -1].numpy()
    return decode_remaining(anchor, horizon)


@torch.no_grad()
def ddim_predict_phases(
    model: WorkflowModel,
    video: LabeledVideo,
    sched: DiffusionSchedule,
    steps: int = 16,
    seed: int = 0,
    eta: float = 0.0,
) -> np.ndarray:
    windows = ddim_sample_windows(model, video, sched, steps, seed, eta)
    return windows[:, :, -1].argmax(dim=1).numpy()


def predict_split(
    model: WorkflowModel,
    videos: list[LabeledVideo],
    cfg: TrainConfig,
    branch: str = "task",
    sched: DiffusionSchedule | None = None,
    steps: int = 16,
    seed: int = 0,
) -> dict[str, np.ndarray]:
    """Per-video predictions for a list of videos, by branch.

    Anticipation values are minutes (T, channels); recognition values are
    phase ids (T,).
    """
    if branch not in ("task", "ddim"):
        raise ValueError(f"unknown branch {branch!r}")
    if branch == "ddim" and sched is None:
        raise ValueError("the stochastic branch needs a schedule")
    out: dict[str, np.ndarray] = {}
    for video in videos:
        if cfg.task == "anticipation":
            if branch == "task":
                out[video.video_id] = task_predict_anticipation(model, video, cfg.horizon)
            else:
                out[video.video_id] = ddim_predict_anticipation(
                    model, video, sched, cfg.horizon, steps=steps, seed=seed
                )
        else:
            if branch == "task":
                out[video.video_id] = task_predict_phases(model, video)
            else:
                out[video.video_id] = ddim_predict_phases(model, video, sched, steps=steps, seed=seed)
    return out


def denoiser_invocations(model: WorkflowModel) -> int:
    """Forward count of the stochastic branch; the purity check asserts the
    task-branch evaluation leaves it unchanged."""
    return model.denoiser.call_count
