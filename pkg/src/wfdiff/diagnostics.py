"""Probes of the co-training mechanism.

Three measurements back the mechanism claims: scalar dispersion statistics
of the feature set (does the denoising loss compact the feature space?),
the norm of each loss term's gradient with respect to the conditional
feature (the two-term pull on the encoder), and the agreement between the
deterministic output and the stochastic branch's multi-seed mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import DiffusionSchedule, ddpm_loss_given
from .evaluation import ddim_predict_anticipation, stream_features, task_predict_anticipation
from .heads import task_loss
from .model import TrainConfig, WorkflowModel
from .training import LabeledVideo, window_batch


@dataclass(frozen=True)
class FeatureStats:
    mean_pairwise_distance: float
    covariance_trace: float
    centroid_separation: float | None = None
    minor_component_energy: float | None = None

    def to_dict(self) -> dict:
        return {
            "mean_pairwise_distance": self.mean_pairwise_distance,
            "covariance_trace": self.covariance_trace,
            "centroid_separation": self.centroid_separation,
            "minor_component_energy": self.minor_component_energy,
        }


def feature_dispersion(
    features: np.ndarray,
    class_ids: np.ndarray | None = None,
    top_components: int = 10,
) -> FeatureStats:
    """Mean pairwise distance and covariance trace of a feature set.

    With ``class_ids`` the mean pairwise distance between class centroids is
    added; the residual energy outside the top principal components is
    reported for inspection only.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("need at least two feature vectors")
    n = features.shape[0]
    total = 0.0
    chunk = 512
    for i in range(0, n, chunk):
        block = features[i : i + chunk]
        d = np.sqrt(np.maximum(0.0, _sq_dists(block, features)))
        for r in range(block.shape[0]):
            total += float(d[r, i + r + 1 :].sum())
    mean_pairwise = total / (n * (n - 1) / 2)

    centered = features - features.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / n
    trace = float(np.trace(cov))

    centroid_sep = None
    if class_ids is not None:
        class_ids = np.asarray(class_ids)
        centroids = np.stack([features[class_ids == c].mean(axis=0) for c in np.unique(class_ids)])
        if centroids.shape[0] >= 2:
            d = np.sqrt(np.maximum(0.0, _sq_dists(centroids, centroids)))
            iu = np.triu_indices(centroids.shape[0], k=1)
            centroid_sep = float(d[iu].mean())

    eigvals = np.sort(np.linalg.eigvalsh(cov))[::-1]
    top = min(top_components, eigvals.shape[0])
    denom = float(eigvals.sum())
    minor_energy = float(eigvals[top:].sum() / denom) if denom > 0 else None

    return FeatureStats(
        mean_pairwise_distance=float(mean_pairwise),
        covariance_trace=trace,
        centroid_separation=centroid_sep,
        minor_component_energy=minor_energy,
    )


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (
        np.sum(a**2, axis=1)[:, None] + np.sum(b**2, axis=1)[None, :] - 2.0 * (a @ b.T)
    )


def grad_decomposition(
    model: WorkflowModel,
    video: LabeledVideo,
    cfg: TrainConfig,
    sched: DiffusionSchedule,
    start: int = 0,
    length: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Norms of each loss term's gradient w.r.t. the conditional features.

    Also reports the linearity gap between the summed per-term gradients and
    the gradient of the total loss, which is zero up to float tolerance.
    """
    length = length if length is not None else min(cfg.clip_len, video.num_frames - start)
    end = start + length
    obs_clip = video.obs[start:end]
    with torch.no_grad():
        base, _ = model.encoder.encode_clip(obs_clip)

    gen = torch.Generator()
    gen.manual_seed(seed)
    anchors = torch.arange(start, end, cfg.anchor_stride)
    windows = window_batch(video.window_src, anchors, cfg.lam)
    k = torch.randint(1, sched.num_steps + 1, (windows.shape[0],), generator=gen)
    eps = torch.randn(windows.shape, dtype=windows.dtype, generator=gen)

    def _task_loss(c):
        outputs = model.head(c)
        if cfg.task == "anticipation":
            labels = (video.target_norm[start:end], video.presence[start:end])
        else:
            labels = video.phase_ids[start:end]
        return task_loss(outputs, labels, model.head.cfg)

    def _ddpm_loss(c):
        return ddpm_loss_given(model.denoiser, windows, c[anchors - start], k, eps, sched)

    grads = {}
    for name, fn, enabled in (
        ("task", _task_loss, cfg.with_task),
        ("ddpm", _ddpm_loss, cfg.with_ddpm),
    ):
        if not enabled:
            grads[name] = torch.zeros_like(base)
            continue
        c = base.clone().requires_grad_(True)
        (grad,) = torch.autograd.grad(fn(c), c)
        grads[name] = grad

    c = base.clone().requires_grad_(True)
    total = torch.zeros((), dtype=torch.float64)
    if cfg.with_task:
        total = total + cfg.task_weight * _task_loss(c)
    if cfg.with_ddpm:
        total = total + cfg.ddpm_weight * _ddpm_loss(c)
    (grad_total,) = torch.autograd.grad(total, c)
    combined = cfg.task_weight * grads["task"] + cfg.ddpm_weight * grads["ddpm"]
    gap = float(torch.norm(grad_total - combined))
    return {
        "task_grad_norm": float(torch.norm(grads["task"])),
        "ddpm_grad_norm": float(torch.norm(grads["ddpm"])),
        "linearity_gap": gap,
    }


@torch.no_grad()
def branch_agreement(
    model: WorkflowModel,
    video: LabeledVideo,
    cfg: TrainConfig,
    sched: DiffusionSchedule,
    n_seeds: int = 20,
    steps: int = 16,
    seed0: int = 0,
) -> dict[str, np.ndarray]:
    """Task output next to the multi-seed envelope of the stochastic branch.

    Returns per-frame arrays of shape (T, channels): the task prediction and
    the mean/min/max over ``n_seeds`` accelerated-sampler runs, in minutes.
    Deterministic given the seed list seed0 .. seed0+n_seeds-1.
    """
    features = stream_features(model, video.obs)
    t_pred = task_predict_anticipation(model, video, cfg.horizon)
    samples = np.stack(
        [
            ddim_predict_anticipation(
                model, video, sched, cfg.horizon, steps=steps, seed=seed0 + s, features=features
            )
            for s in range(n_seeds)
        ]
    )
    return {
        "task": t_pred,
        "ddim_mean": samples.mean(axis=0),
        "ddim_min": samples.min(axis=0),
        "ddim_max": samples.max(axis=0),
    }


def pearson_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Correlation of two flattened arrays; NaN when either is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return float("nan")
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
