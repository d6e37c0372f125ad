"""Shared conditional feature extractor: a small spatial encoder per frame
feeding a gated recurrent cell. The hidden output at frame t is the feature
both branches condition on; it sees only frames <= t.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "vector"
    obs_dim: int = 32
    image_shape: tuple[int, int, int] = (1, 8, 8)
    spatial_width: int = 64
    feature_dim: int = 512

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.kind not in ("vector", "tiny-image"):
            raise ValueError(f"unknown observation kind {self.kind!r}")


@dataclass
class TemporalState:
    """Hidden and cell vectors of the recurrent module, shape (feature_dim,)."""

    hidden: torch.Tensor
    cell: torch.Tensor

    @classmethod
    def zeros(cls, feature_dim: int, dtype: torch.dtype = torch.float64) -> "TemporalState":
        return cls(
            hidden=torch.zeros(feature_dim, dtype=dtype),
            cell=torch.zeros(feature_dim, dtype=dtype),
        )

    def detached(self) -> "TemporalState":
        return TemporalState(hidden=self.hidden.detach(), cell=self.cell.detach())

    def clone(self) -> "TemporalState":
        return TemporalState(hidden=self.hidden.clone(), cell=self.cell.clone())


class VectorEncoder(nn.Module):
    """Two affine stages with a tanh in between; tanh(0)=0 keeps the
    zeroed-parameter output exactly zero."""

    def __init__(self, obs_dim: int, width: int):
        super().__init__()
        self.fc1 = nn.Linear(obs_dim, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.tanh(self.fc1(x)))


class TinyImageEncoder(nn.Module):
    def __init__(self, image_shape: tuple[int, int, int], width: int):
        super().__init__()
        c = image_shape[0]
        self.conv1 = nn.Conv2d(c, width // 2, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(width // 2, width, 3, stride=2, padding=1)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        unbatched = x.ndim == 3
        if unbatched:
            x = x[None]
        h = torch.tanh(self.conv1(x))
        h = torch.tanh(self.conv2(h))
        h = self.fc(self.pool(h).flatten(1))
        return h[0] if unbatched else h


class ConditionalEncoder(nn.Module):
    """encode_frame + temporal_step, and their fold over a clip."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.kind == "vector":
            self.spatial = VectorEncoder(cfg.obs_dim, cfg.spatial_width)
        else:
            self.spatial = TinyImageEncoder(cfg.image_shape, cfg.spatial_width)
        self.cell = nn.LSTMCell(cfg.spatial_width, cfg.feature_dim)

    def initial_state(self) -> TemporalState:
        dtype = self.cell.weight_ih.dtype
        return TemporalState.zeros(self.cfg.feature_dim, dtype=dtype)

    def encode_frame(self, obs: torch.Tensor) -> torch.Tensor:
        if self.cfg.kind == "vector" and obs.shape[-1] != self.cfg.obs_dim:
            raise ValueError(f"observation dim {obs.shape[-1]} != {self.cfg.obs_dim}")
        return self.spatial(obs)

    def temporal_step(
        self, embedding: torch.Tensor, state: TemporalState
    ) -> tuple[torch.Tensor, TemporalState]:
        h, c = self.cell(embedding, (state.hidden, state.cell))
        return h, TemporalState(hidden=h, cell=c)

    def encode_clip(
        self, frames: torch.Tensor, state: TemporalState | None = None
    ) -> tuple[torch.Tensor, TemporalState]:
        """Fold temporal_step over the per-frame embeddings of a clip.

        ``frames`` has shape (T, obs_dim) for vector observations; returns the
        (T, feature_dim) feature sequence and the state after the last frame.
        """
        if frames.shape[0] < 1:
            raise ValueError("clip must contain at least one frame")
        if state is None:
            state = self.initial_state()
        features = []
        for t in range(frames.shape[0]):
            emb = self.encode_frame(frames[t])
            c_t, state = self.temporal_step(emb, state)
            features.append(c_t)
        return torch.stack(features), state
