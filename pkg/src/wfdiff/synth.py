"""Synthetic procedure generator.

Produces workflow timelines from a small grammar: a mixture of phase-order
variants (a dominant pattern plus long-tail deviations), per-phase duration
ranges, and per-phase tool-usage templates. Observations are low-dimensional
vectors built from orthogonal state prototypes, so the encoder works on a
compact stand-in for video frames while every (phase, tool) state stays
linearly separable in the noise-free limit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .workflow import WorkflowTimeline

# Tags keep the prototype / style / noise RNG streams disjoint.
_PROTO_TAG = 0x50524F54
_STYLE_TAG = 0x5354594C
_NOISE_TAG = 0x4E4F4953

PHASE_PROTO_SCALE = 2.0
TOOL_PROTO_SCALE = 1.0
PROGRESS_SCALE = 0.5
STYLE_SCALE = 0.25


@dataclass(frozen=True)
class ToolTemplate:
    """One tool activation inside a phase: onset offset and duration ranges (frames)."""

    tool: int
    onset: tuple[int, int]
    duration: tuple[int, int]


@dataclass(frozen=True)
class PhaseVariant:
    """A phase ordering with its mixture probability and per-phase duration ranges."""

    order: tuple[int, ...]
    probability: float
    durations: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class ProcedureGrammar:
    phase_names: tuple[str, ...]
    tool_names: tuple[str, ...]
    variants: tuple[PhaseVariant, ...]
    tool_templates: dict[int, tuple[ToolTemplate, ...]] = field(default_factory=dict)
    observation_dim: int = 32
    sigma_obs: float = 0.0

    def __post_init__(self):
        total = sum(v.probability for v in self.variants)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"variant probabilities sum to {total}, expected 1")
        n_phases = len(self.phase_names)
        for v in self.variants:
            if len(set(v.order)) != len(v.order):
                raise ValueError("variant order repeats a phase")
            if any(p < 0 or p >= n_phases for p in v.order):
                raise ValueError("variant order references unknown phases")
            if len(v.durations) != len(v.order):
                raise ValueError("one duration range per phase in the order is required")
            for lo, hi in v.durations:
                if lo < 1 or hi < lo:
                    raise ValueError(f"invalid duration range ({lo}, {hi})")
        for phase, templates in self.tool_templates.items():
            if not 0 <= phase < n_phases:
                raise ValueError(f"tool template for unknown phase {phase}")
            for tpl in templates:
                if not 0 <= tpl.tool < len(self.tool_names):
                    raise ValueError(f"tool template references unknown tool {tpl.tool}")
        if self.sigma_obs < 0:
            raise ValueError("sigma_obs must be >= 0")
        if self.observation_dim < len(self.phase_names) + len(self.tool_names) + 1:
            raise ValueError("observation_dim too small for orthogonal state prototypes")

    @property
    def dominant_variant(self) -> int:
        return int(np.argmax([v.probability for v in self.variants]))

    def to_dict(self) -> dict:
        return {
            "phase_names": list(self.phase_names),
            "tool_names": list(self.tool_names),
            "variants": [
                {
                    "order": list(v.order),
                    "probability": v.probability,
                    "durations": [list(d) for d in v.durations],
                }
                for v in self.variants
            ],
            "tool_templates": {
                str(phase): [
                    {"tool": t.tool, "onset": list(t.onset), "duration": list(t.duration)}
                    for t in templates
                ]
                for phase, templates in sorted(self.tool_templates.items())
            },
            "observation_dim": self.observation_dim,
            "sigma_obs": self.sigma_obs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProcedureGrammar":
        return cls(
            phase_names=tuple(data["phase_names"]),
            tool_names=tuple(data["tool_names"]),
            variants=tuple(
                PhaseVariant(
                    order=tuple(v["order"]),
                    probability=float(v["probability"]),
                    durations=tuple(tuple(d) for d in v["durations"]),
                )
                for v in data["variants"]
            ),
            tool_templates={
                int(phase): tuple(
                    ToolTemplate(tool=int(t["tool"]), onset=tuple(t["onset"]), duration=tuple(t["duration"]))
                    for t in templates
                )
                for phase, templates in data.get("tool_templates", {}).items()
            },
            observation_dim=int(data.get("observation_dim", 32)),
            sigma_obs=float(data.get("sigma_obs", 0.0)),
        )

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def sample_procedure(grammar: ProcedureGrammar, seed: int) -> WorkflowTimeline:
    """Draw one timeline; deterministic for a fixed (grammar, seed)."""
    timeline, _ = sample_procedure_with_variant(grammar, seed)
    return timeline


def sample_procedure_with_variant(
    grammar: ProcedureGrammar, seed: int
) -> tuple[WorkflowTimeline, int]:
    """Like :func:`sample_procedure` but also reports the drawn variant index."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    probs = np.array([v.probability for v in grammar.variants])
    variant_idx = int(rng.choice(len(grammar.variants), p=probs))
    variant = grammar.variants[variant_idx]

    durations = [int(rng.integers(lo, hi + 1)) for lo, hi in variant.durations]
    num_frames = sum(durations)
    phase_of = np.empty(num_frames, dtype=np.int64)
    tool_active = np.zeros((num_frames, len(grammar.tool_names)), dtype=bool)

    start = 0
    for phase, dur in zip(variant.order, durations):
        phase_of[start : start + dur] = phase
        for tpl in grammar.tool_templates.get(phase, ()):
            onset = int(rng.integers(tpl.onset[0], tpl.onset[1] + 1))
            length = int(rng.integers(tpl.duration[0], tpl.duration[1] + 1))
            t0 = start + onset
            tool_active[t0 : min(t0 + length, num_frames), tpl.tool] = True
        start += dur

    timeline = WorkflowTimeline(
        video_id=f"video_{seed:08d}",
        phase_of=phase_of,
        tool_active=tool_active,
        phase_names=grammar.phase_names,
        tool_names=grammar.tool_names,
    )
    return timeline, variant_idx


def state_prototypes(grammar: ProcedureGrammar) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthogonal (phase, tool, progress) prototype directions for observations.

    Deterministic given the grammar's dimensions; mutually orthonormal columns
    scaled so any two distinct noise-free states are separated by at least
    ``min(PHASE_PROTO_SCALE * sqrt(2), TOOL_PROTO_SCALE)``.
    """
    n_phases = len(grammar.phase_names)
    n_tools = len(grammar.tool_names)
    dim = grammar.observation_dim
    rng = np.random.default_rng(np.random.SeedSequence([_PROTO_TAG, n_phases, n_tools, dim]))
    raw = rng.standard_normal((dim, n_phases + n_tools + 1))
    q, _ = np.linalg.qr(raw)
    phases = q[:, :n_phases].T * PHASE_PROTO_SCALE
    tools = q[:, n_phases : n_phases + n_tools].T * TOOL_PROTO_SCALE
    progress_dir = q[:, -1] * PROGRESS_SCALE
    return phases, tools, progress_dir


def prototype_separation(grammar: ProcedureGrammar) -> float:
    """Guaranteed minimum distance between distinct noise-free states."""
    return min(PHASE_PROTO_SCALE * np.sqrt(2.0), TOOL_PROTO_SCALE)


def phase_progress(timeline: WorkflowTimeline, t: int) -> float:
    """Relative position of frame t inside its contiguous phase run, in [0, 1]."""
    phase = timeline.phase_of[t]
    start = t
    while start > 0 and timeline.phase_of[start - 1] == phase:
        start -= 1
    end = t
    last = timeline.num_frames - 1
    while end < last and timeline.phase_of[end + 1] == phase:
        end += 1
    return (t - start) / max(1, end - start)


def render_observation(
    timeline: WorkflowTimeline, t: int, grammar: ProcedureGrammar, seed: int
) -> np.ndarray:
    """Observation vector for frame t of a timeline rendered under ``seed``."""
    if not 0 <= t < timeline.num_frames:
        raise ValueError(f"frame {t} outside timeline of {timeline.num_frames} frames")
    phases, tools, progress_dir = state_prototypes(grammar)
    obs = phases[timeline.phase_of[t]].copy()
    for j in range(timeline.num_tools):
        if timeline.tool_active[t, j]:
            obs += tools[j]
    obs += phase_progress(timeline, t) * progress_dir

    style_rng = np.random.default_rng(np.random.SeedSequence([_STYLE_TAG, seed]))
    obs += STYLE_SCALE * style_rng.standard_normal(grammar.observation_dim)

    if grammar.sigma_obs > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([_NOISE_TAG, seed, t]))
        obs += grammar.sigma_obs * noise_rng.standard_normal(grammar.observation_dim)
    return obs


def render_video(timeline: WorkflowTimeline, grammar: ProcedureGrammar, seed: int) -> np.ndarray:
    """All observations of a timeline, shape (num_frames, observation_dim)."""
    return np.stack(
        [render_observation(timeline, t, grammar, seed) for t in range(timeline.num_frames)]
    )


def video_seed(dataset_seed: int, index: int) -> int:
    """Stable per-video seed derived from the dataset seed."""
    ss = np.random.SeedSequence([dataset_seed, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
