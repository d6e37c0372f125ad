"""Assembly of the co-trained model: shared encoder, task head, denoiser.

All parameters live in float64; desk-scale widths keep this cheap and give
the numeric headroom the identity and gradient checks rely on.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .diffusion import DenoiserConfig, ConditionalDenoiser
from .encoder import ConditionalEncoder, EncoderConfig
from .heads import TaskHead, TaskHeadConfig


@dataclass(frozen=True)
class TrainConfig:
    """Flat configuration for one training run."""

    task: str = "anticipation"
    horizon: float = 3.0  # minutes
    minutes_per_frame: float = 1.0 / 60.0
    anticipation_targets: str = "tools"  # or "phases"

    feature_dim: int = 512
    spatial_width: int = 64
    denoiser_widths: tuple[int, ...] = (32, 64)
    timestep_dim: int = 128
    conditioning: str = "film"

    diffusion_steps: int = 100
    lam: int = 32
    schedule: str = "cosine"
    sigma_mode: str = "beta"
    anchor_stride: int = 1

    mu: float = 0.01
    task_weight: float = 1.0
    ddpm_weight: float = 1.0
    with_task: bool = True
    with_ddpm: bool = True

    epochs: int = 50
    learning_rate: float = 1e-4
    weight_decay: float = 1e-6
    warmup_frac: float = 0.05
    clip_len: int = 64
    carry_state: bool = True
    seed: int = 0
    # tensors here are tiny; intra-op threading costs more than it buys
    num_threads: int = 1

    def __post_init__(self):
        if not (self.with_task or self.with_ddpm):
            raise ValueError("at least one of with_task / with_ddpm must be enabled")
        if self.task not in ("anticipation", "recognition"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.anticipation_targets not in ("tools", "phases"):
            raise ValueError(f"unknown anticipation_targets {self.anticipation_targets!r}")
        if self.horizon <= 0 or self.minutes_per_frame <= 0:
            raise ValueError("horizon and minutes_per_frame must be positive")
        if self.epochs < 0 or self.clip_len < 1 or self.lam < 1 or self.diffusion_steps < 1:
            raise ValueError("epochs/clip_len/lam/diffusion_steps out of range")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ValueError("warmup_frac must lie in [0, 1]")
        object.__setattr__(self, "denoiser_widths", tuple(self.denoiser_widths))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["denoiser_widths"] = list(self.denoiser_widths)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "denoiser_widths" in data:
            data["denoiser_widths"] = tuple(data["denoiser_widths"])
        return cls(**data)

    def hash(self) -> str:
        import json

        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class ModelDims:
    """Dataset-derived dimensions needed to build the model."""

    obs_dim: int
    channels: int  # task output channels == label window channels


def subseed(seed: int, tag: str) -> int:
    """Stable derived seed for an independent random stream."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


class WorkflowModel(nn.Module):
    """Encoder shared by both branches, plus the task head and the denoiser.

    Both branches are always constructed (so a fixed seed yields identical
    encoder initialization across branch-toggle ablations); the training
    toggles decide which losses flow.
    """

    def __init__(self, cfg: TrainConfig, dims: ModelDims):
        super().__init__()
        self.cfg = cfg
        self.dims = dims
        self.encoder = ConditionalEncoder(
            EncoderConfig(
                kind="vector",
                obs_dim=dims.obs_dim,
                spatial_width=cfg.spatial_width,
                feature_dim=cfg.feature_dim,
            )
        )
        self.head = TaskHead(
            TaskHeadConfig(
                kind=cfg.task,
                channels=dims.channels,
                feature_dim=cfg.feature_dim,
                mu=cfg.mu,
            )
        )
        self.denoiser = ConditionalDenoiser(
            DenoiserConfig(
                channels=dims.channels,
                lam=cfg.lam,
                cond_dim=cfg.feature_dim,
                widths=cfg.denoiser_widths,
                timestep_dim=cfg.timestep_dim,
                conditioning=cfg.conditioning,
            )
        )


def build_model(cfg: TrainConfig, dims: ModelDims) -> WorkflowModel:
    """Construct the model in float64 with seed-determined initialization."""
    torch.manual_seed(subseed(cfg.seed, "init"))
    model = WorkflowModel(cfg, dims)
    return model.to(torch.float64)
