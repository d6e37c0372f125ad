"""Deterministic task branch: linear predictor over the conditional feature
plus the task losses.

Anticipation regresses normalized remaining time (remaining / horizon, in
[0, 1]) per channel with a SmoothL1 loss and adds a mu-weighted 3-way
presence cross-entropy per channel. Recognition is plain cross-entropy over
phase logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

N_PRESENCE_CLASSES = 3


class NonFiniteValueError(ValueError):
    """Raised when loss inputs contain NaN or infinities."""


@dataclass(frozen=True)
class TaskHeadConfig:
    kind: str = "anticipation"
    channels: int = 1
    feature_dim: int = 512
    mu: float = 0.01

    def __post_init__(self):
        if self.kind not in ("anticipation", "recognition"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")


class AnticipationOutput(NamedTuple):
    remaining: torch.Tensor  # (..., channels), normalized units
    presence_logits: torch.Tensor  # (..., channels, 3)


class TaskHead(nn.Module):
    def __init__(self, cfg: TaskHeadConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.kind == "anticipation":
            self.regressor = nn.Linear(cfg.feature_dim, cfg.channels)
            self.presence = nn.Linear(cfg.feature_dim, cfg.channels * N_PRESENCE_CLASSES)
        else:
            self.classifier = nn.Linear(cfg.feature_dim, cfg.channels)

    def forward(self, features: torch.Tensor):
        if self.cfg.kind == "anticipation":
            remaining = self.regressor(features)
            logits = self.presence(features)
            logits = logits.reshape(*remaining.shape, N_PRESENCE_CLASSES)
            return AnticipationOutput(remaining=remaining, presence_logits=logits)
        return self.classifier(features)

    predict = forward


def _require_finite(name: str, *tensors: torch.Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NonFiniteValueError(f"non-finite values in {name}")


def anticipation_loss(
    outputs: AnticipationOutput,
    target_norm: torch.Tensor,
    presence: torch.Tensor,
    mu: float,
) -> torch.Tensor:
    """SmoothL1 on normalized remaining time + mu * presence cross-entropy.

    Both terms average over frames and channels. SmoothL1 uses transition
    point 1: quadratic below unit error, linear above.
    """
    _require_finite("anticipation outputs", outputs.remaining, outputs.presence_logits)
    _require_finite("anticipation labels", target_norm)
    reg = F.smooth_l1_loss(outputs.remaining, target_norm, beta=1.0)
    ce = F.cross_entropy(
        outputs.presence_logits.reshape(-1, N_PRESENCE_CLASSES), presence.reshape(-1)
    )
    return reg + mu * ce


def recognition_loss(logits: torch.Tensor, phase_ids: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over frames."""
    _require_finite("recognition logits", logits)
    return F.cross_entropy(logits, phase_ids)


def task_loss(outputs, labels, cfg: TaskHeadConfig) -> torch.Tensor:
    """Dispatch on task kind. ``labels`` is (target_norm, presence) for
    anticipation and a phase-id tensor for recognition."""
    if cfg.kind == "anticipation":
        target_norm, presence = labels
        return anticipation_loss(outputs, target_norm, presence, cfg.mu)
    return recognition_loss(outputs, labels)
