import numpy as np
import pytest
import torch

from wfdiff.data import emit_dataset, ingest_dataset
from wfdiff.model import TrainConfig
from wfdiff.synth import PhaseVariant, ProcedureGrammar, ToolTemplate

torch.set_num_threads(1)


def tiny_grammar(sigma_obs: float = 0.2) -> ProcedureGrammar:
    return ProcedureGrammar(
        phase_names=("a", "b", "c"),
        tool_names=("t0", "t1"),
        variants=(
            PhaseVariant(order=(0, 1, 2), probability=0.8, durations=((6, 10), (8, 14), (6, 10))),
            PhaseVariant(order=(0, 2, 1), probability=0.2, durations=((6, 10), (6, 10), (8, 14))),
        ),
        tool_templates={
            1: (ToolTemplate(tool=0, onset=(1, 3), duration=(3, 6)),),
            2: (ToolTemplate(tool=1, onset=(1, 3), duration=(3, 6)),),
        },
        observation_dim=8,
        sigma_obs=sigma_obs,
    )


def tiny_config(**overrides) -> TrainConfig:
    defaults = dict(
        task="anticipation",
        horizon=0.2,  # 12 frames at 1 FPS
        feature_dim=12,
        spatial_width=10,
        denoiser_widths=(8, 12),
        timestep_dim=16,
        diffusion_steps=10,
        lam=8,
        epochs=2,
        learning_rate=1e-3,
        clip_len=16,
        seed=0,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinydata")
    emit_dataset(tiny_grammar(), n_videos=8, split_ratios=(0.5, 0.5), seed=11, out_dir=root)
    return ingest_dataset(root)


def brute_force_remaining(active: np.ndarray, horizon: float, minutes_per_frame: float) -> np.ndarray:
    """Independent oracle: forward scan from each frame to the next active frame."""
    n = len(active)
    out = np.empty(n)
    for t in range(n):
        if active[t]:
            out[t] = 0.0
            continue
        dist = None
        for s in range(t + 1, n):
            if active[s]:
                dist = s - t
                break
        out[t] = horizon if dist is None else min(horizon, dist * minutes_per_frame)
    return out
