"""Workflow timelines and label derivation.

A timeline is the ground truth of one procedure sampled at 1 frame/sec:
a phase id per frame plus per-tool activity flags. From it we derive the
supervision used everywhere else: horizon-clamped remaining time until the
next occurrence of a target event, the three-way presence class, categorical
phase labels, and the [-1, 1]-encoded historical label windows consumed by
the diffusion branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

# 1 frame/sec is the resampling convention for all timelines.
MINUTES_PER_FRAME = 1.0 / 60.0


class UnknownTargetError(ValueError):
    """Raised when an anticipation target does not exist in the timeline."""


class Presence(IntEnum):
    PRESENT = 0
    IN_HORIZON = 1
    OUT_OF_HORIZON = 2


@dataclass(frozen=True)
class WorkflowTimeline:
    """Per-frame phase ids and tool activity for one procedure.

    ``phase_of`` has shape (num_frames,) with values indexing ``phase_names``;
    ``tool_active`` has shape (num_frames, num_tools) of booleans.
    """

    video_id: str
    phase_of: np.ndarray
    tool_active: np.ndarray
    phase_names: tuple[str, ...]
    tool_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "phase_of", np.asarray(self.phase_of, dtype=np.int64))
        object.__setattr__(self, "tool_active", np.asarray(self.tool_active, dtype=bool))
        if self.phase_of.ndim != 1 or self.phase_of.size < 1:
            raise ValueError("phase_of must be a non-empty 1-D sequence")
        if self.tool_active.shape != (self.num_frames, len(self.tool_names)):
            raise ValueError(
                f"tool_active shape {self.tool_active.shape} does not match "
                f"({self.num_frames}, {len(self.tool_names)})"
            )
        if self.phase_of.min() < 0 or self.phase_of.max() >= len(self.phase_names):
            raise ValueError("phase ids outside the declared phase vocabulary")

    @property
    def num_frames(self) -> int:
        return int(self.phase_of.shape[0])

    @property
    def num_tools(self) -> int:
        return len(self.tool_names)

    @property
    def num_phases(self) -> int:
        return len(self.phase_names)


@dataclass(frozen=True)
class AnticipationLabel:
    """Remaining time (minutes, clamped at the horizon) plus presence class."""

    remaining: float
    presence: Presence
    horizon: float

    def __post_init__(self):
        if not 0.0 <= self.remaining <= self.horizon:
            raise ValueError(f"remaining {self.remaining} outside [0, {self.horizon}]")
        expected = _presence_of(self.remaining, self.horizon)
        if self.presence != expected:
            raise ValueError(f"presence {self.presence} inconsistent with remaining {self.remaining}")


@dataclass(frozen=True)
class PhaseLabel:
    phase_id: int
    num_phases: int
    one_hot: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0 <= self.phase_id < self.num_phases:
            raise ValueError(f"phase id {self.phase_id} outside vocabulary of {self.num_phases}")
        one_hot = np.zeros(self.num_phases)
        one_hot[self.phase_id] = 1.0
        object.__setattr__(self, "one_hot", one_hot)


@dataclass(frozen=True)
class LabelWindow:
    """A lambda-frame historical label window, signal-encoded in [-1, 1].

    Row i holds the encoded label of frame ``anchor_t - lam + 1 + i``,
    left-clamped at frame 0.
    """

    values: np.ndarray
    anchor_t: int
    lam: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape[0] != self.lam:
            raise ValueError(f"window has {values.shape[0]} rows, expected lam={self.lam}")
        if values.size and (values.min() < -1.0 or values.max() > 1.0):
            raise ValueError("window entries must lie in [-1, 1]")


def target_activity(timeline: WorkflowTimeline, target: tuple[str, int]) -> np.ndarray:
    """Boolean per-frame activity of an anticipation target.

    ``target`` is ("tool", index) or ("phase", phase_id).
    """
    kind, idx = target
    if kind == "tool":
        if not 0 <= idx < timeline.num_tools:
            raise UnknownTargetError(f"tool index {idx} not in timeline {timeline.video_id!r}")
        return timeline.tool_active[:, idx].copy()
    if kind == "phase":
        if not 0 <= idx < timeline.num_phases:
            raise UnknownTargetError(f"phase id {idx} not in timeline {timeline.video_id!r}")
        return timeline.phase_of == idx
    raise UnknownTargetError(f"unknown target kind {kind!r}")


def remaining_time_labels(
    timeline: WorkflowTimeline,
    target: tuple[str, int],
    horizon: float,
    minutes_per_frame: float = MINUTES_PER_FRAME,
) -> np.ndarray:
    """Remaining time in minutes until the next onset of ``target``, per frame.

    Zero while the target is active, clamped at ``horizon``; frames after the
    final occurrence get ``horizon``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    active = target_activity(timeline, target)
    n = active.shape[0]
    remaining = np.empty(n, dtype=np.float64)
    frames_to_next = np.inf
    for t in range(n - 1, -1, -1):
        if active[t]:
            frames_to_next = 0.0
        else:
            frames_to_next = frames_to_next + 1.0
        remaining[t] = min(horizon, frames_to_next * minutes_per_frame)
    return remaining


def presence_labels(remaining: np.ndarray, horizon: float) -> np.ndarray:
    """Map remaining times to {present, in-horizon, out-of-horizon} codes."""
    remaining = np.asarray(remaining, dtype=np.float64)
    if remaining.size and (remaining.min() < 0.0 or remaining.max() > horizon):
        raise ValueError(f"remaining values outside [0, {horizon}]")
    out = np.full(remaining.shape, Presence.IN_HORIZON, dtype=np.int64)
    out[remaining == 0.0] = Presence.PRESENT
    out[remaining == horizon] = Presence.OUT_OF_HORIZON
    return out


def _presence_of(remaining: float, horizon: float) -> Presence:
    if remaining == 0.0:
        return Presence.PRESENT
    if remaining == horizon:
        return Presence.OUT_OF_HORIZON
    return Presence.IN_HORIZON


def anticipation_labels(
    timeline: WorkflowTimeline,
    target: tuple[str, int],
    horizon: float,
    minutes_per_frame: float = MINUTES_PER_FRAME,
) -> list[AnticipationLabel]:
    """Per-frame :class:`AnticipationLabel` objects for one target."""
    remaining = remaining_time_labels(timeline, target, horizon, minutes_per_frame)
    presence = presence_labels(remaining, horizon)
    return [
        AnticipationLabel(float(r), Presence(int(p)), horizon)
        for r, p in zip(remaining, presence)
    ]


def encode_remaining(remaining: np.ndarray, horizon: float) -> np.ndarray:
    """Affine map of remaining/horizon from [0, 1] onto the [-1, 1] signal range."""
    return 2.0 * (np.asarray(remaining, dtype=np.float64) / horizon) - 1.0


def decode_remaining(values: np.ndarray, horizon: float) -> np.ndarray:
    """Inverse of :func:`encode_remaining`, clamping overshoot back into range."""
    clipped = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return (clipped + 1.0) / 2.0 * horizon


def encode_phases(phase_ids: np.ndarray, num_phases: int) -> np.ndarray:
    """Signed one-hot encoding: +1 on the true phase, -1 elsewhere."""
    phase_ids = np.asarray(phase_ids, dtype=np.int64)
    out = np.full((phase_ids.shape[0], num_phases), -1.0)
    out[np.arange(phase_ids.shape[0]), phase_ids] = 1.0
    return out


def decode_phases(values: np.ndarray) -> np.ndarray:
    return np.argmax(np.asarray(values), axis=-1)


def encode_signal(label: AnticipationLabel | PhaseLabel) -> np.ndarray:
    """Signal-encode a single label into [-1, 1]^C."""
    if isinstance(label, AnticipationLabel):
        return encode_remaining(np.array([label.remaining]), label.horizon)
    if isinstance(label, PhaseLabel):
        return 2.0 * label.one_hot - 1.0
    raise TypeError(f"cannot encode {type(label).__name__}")


def window_indices(anchor_t: int, lam: int, num_frames: int | None = None) -> np.ndarray:
    """Frame indices for the rows of an anchor's window, left-clamped at 0."""
    if lam < 1:
        raise ValueError("lam must be >= 1")
    idx = np.arange(anchor_t - lam + 1, anchor_t + 1)
    idx = np.maximum(idx, 0)
    if num_frames is not None and anchor_t >= num_frames:
        raise ValueError(f"anchor {anchor_t} outside sequence of {num_frames} frames")
    return idx


def build_target_window(encoded: np.ndarray, anchor_t: int, lam: int) -> LabelWindow:
    """Window of the lam most recent encoded labels ending at ``anchor_t``.

    Frames before 0 repeat frame 0's label rather than padding with zeros,
    which would read as a spurious mid-scale signal.
    """
    encoded = np.asarray(encoded, dtype=np.float64)
    idx = window_indices(anchor_t, lam, encoded.shape[0])
    return LabelWindow(values=encoded[idx], anchor_t=anchor_t, lam=lam)
